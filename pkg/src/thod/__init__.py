"""Rotational odometry from ultra-low-resolution (24x32) thermal cameras.

A small CNN regresses the camera's signed azimuth rotation speed from a few
stacked consecutive frames. The package provides the network and its
from-scratch training machinery, dataset tooling (canonical format, CSV
import, synthetic generation), and the 6-fold ablation harness with box-plot
reporting.
"""

from .data import (
    Acquisition,
    DatasetError,
    FoldSplit,
    Sample,
    SampleSet,
    build_sample_set,
    import_csv,
    load_dataset,
    make_windows,
    save_dataset,
    split_folds,
    subsample,
)
from .harness import BoxStats, FoldResult, ablate, box_stats, run_fold
from .losses import berhu_loss, mse_loss
from .model import (
    CnnConfig,
    ForwardCache,
    ModelParams,
    backward,
    build_model,
    forward,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .ops import NonFiniteError, ShapeError
from .optim import AdamState, adam_step
from .rng import Rng, derive_seed
from .synth import make_default_dataset, make_panorama, synth_acquisition
from .train import TrainConfig, TrainHistory, TrainingDivergedError, evaluate_mse, train

__version__ = "0.1.0"

__all__ = [
    "Acquisition", "AdamState", "BoxStats", "CnnConfig", "DatasetError",
    "FoldResult", "FoldSplit", "ForwardCache", "ModelParams",
    "NonFiniteError", "Rng", "Sample", "SampleSet", "ShapeError",
    "TrainConfig", "TrainHistory", "TrainingDivergedError",
    "ablate", "adam_step", "backward", "berhu_loss", "box_stats",
    "build_model", "build_sample_set", "derive_seed", "evaluate_mse",
    "forward", "import_csv", "load_checkpoint", "load_dataset",
    "make_default_dataset", "make_panorama", "make_windows", "mse_loss",
    "param_count", "run_fold", "save_checkpoint", "save_dataset",
    "split_folds", "subsample", "synth_acquisition", "train",
]
