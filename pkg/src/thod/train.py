"""Deterministic mini-batch training of the odometry CNN.

Each epoch shuffles the sample order with a seeded Fisher-Yates permutation,
walks it in sequential mini-batches (the trailing partial batch is trained,
not dropped), and applies forward -> loss -> backward -> Adam. There is no
validation split or early stopping; the final-epoch parameters are the
result. Identical (seed, data, config) inputs give bitwise-identical
histories and parameters.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .data import SampleSet, SPEED_MAX_DEGPS
from .fileio import atomic_write_text
from .losses import berhu_loss, mse_loss
from .model import ModelParams, Workspace, backward, forward
from .optim import AdamState, adam_step
from .rng import Rng, derive_seed

LOSSES = ("berhu", "mse")
_EVAL_BATCH = 256


class TrainingDivergedError(FloatingPointError):
    """The loss went NaN/Inf; training aborts with context."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch: int = 32
    epochs: int = 40
    loss: str = "berhu"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")


@dataclass
class TrainHistory:
    """Per-epoch mean training loss and held-out test MSE (normalized units)."""

    train_loss: list[float] = field(default_factory=list)
    test_mse_norm: list[float] = field(default_factory=list)
    final_params: ModelParams | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "test_mse_norm", "test_mse_degps"])
        for i, (tl, tm) in enumerate(zip(self.train_loss, self.test_mse_norm), start=1):
            writer.writerow([i, repr(tl), repr(tm), repr(tm * SPEED_MAX_DEGPS**2)])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def evaluate_mse(params: ModelParams, data: SampleSet) -> float:
    """Mean squared error over a sample set, in normalized label units."""
    total = 0.0
    for lo in range(0, len(data), _EVAL_BATCH):
        xb = data.x[lo : lo + _EVAL_BATCH]
        preds, _ = forward(params, xb)
        r = preds - data.y[lo : lo + _EVAL_BATCH]
        total += float((r * r).sum())
    return total / len(data)


def train(
    params: ModelParams,
    data: SampleSet,
    test: SampleSet,
    tcfg: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    """Run the full training schedule; returns (final params, history)."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    if data.x.shape[1:] != test.x.shape[1:]:
        raise ValueError(
            f"train/test sample shapes differ: {data.x.shape[1:]} vs {test.x.shape[1:]}"
        )
    loss_fn = berhu_loss if tcfg.loss == "berhu" else mse_loss
    shuffle_rng = Rng(derive_seed(tcfg.seed, "shuffle"))
    params = params.map(np.copy)  # private mutable copy, caller's params stay put
    state = AdamState.init(params)
    history = TrainHistory()
    workspace = Workspace()

    # The network's GEMMs are too small for threaded BLAS to pay off: thread
    # wake-ups between the compiled-kernel phases dominate. Pinning to one
    # thread also keeps concurrent fold runs from oversubscribing cores.
    with threadpool_limits(limits=1, user_api="blas"):
        _train_epochs(params, data, test, tcfg, loss_fn, shuffle_rng, state,
                      history, workspace)
    history.final_params = params
    return params, history


def _train_epochs(params, data, test, tcfg, loss_fn, shuffle_rng, state, history, workspace):
    n = len(data)
    for epoch in range(tcfg.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, tcfg.batch):
            idx = perm[lo : lo + tcfg.batch]
            xb = data.x[idx]
            yb = data.y[idx]
            preds, cache = forward(params, xb, workspace)
            out = loss_fn(preds, yb)
            loss, d_preds = out[0], out[1]
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite {tcfg.loss} loss at epoch {epoch + 1}, "
                    f"batch starting at {lo} (seed {tcfg.seed})"
                )
            grads = backward(params, cache, d_preds, workspace)
            params, state = adam_step(
                params, grads, state, tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps,
                in_place=True,
            )
            epoch_loss += loss * len(idx)
        history.train_loss.append(epoch_loss / n)
        history.test_mse_norm.append(evaluate_mse(params, test))


def with_seed(tcfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(tcfg, seed=seed)
