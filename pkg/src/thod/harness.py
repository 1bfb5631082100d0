"""6-fold evaluation protocol and the two ablation sweeps.

A sweep trains the network once per (sweep value, fold) pair: the frame-count
sweep covers 2..7 stacked frames at full resolution, the resolution sweep
covers subsampling factors {1, 2, 3} with 3 stacked frames. Each run gets an
independent seed derived from (master seed, parameter name, value, fold), so
an entire sweep is reproducible from one integer. Per value, the six
held-out test MSEs are summarized as box-plot statistics.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Acquisition, FoldSplit, SPEED_MAX_DEGPS, build_sample_set, split_folds
from .fileio import atomic_write_text
from .model import CnnConfig, ModelParams, build_model
from .rng import Rng, derive_seed
from .train import TrainConfig, TrainHistory, evaluate_mse, train, with_seed

SWEEP_NF = "nf"
SWEEP_NR = "nr"
NF_SWEEP_VALUES = (2, 3, 4, 5, 6, 7)
NR_SWEEP_VALUES = (1, 2, 3)
FIXED_NF_FOR_NR_SWEEP = 3   # frame count held at the sweep's best value
FIXED_NR_FOR_NF_SWEEP = 1   # full resolution while sweeping frame count

RESULTS_HEADER = ["param_name", "param_value", "fold", "seed", "mse_norm", "mse_degps", "rmse_degps"]
BOXSTATS_HEADER = ["param_value", "median", "q1", "q3", "whisker_lo", "whisker_hi", "n_outliers"]


@dataclass(frozen=True)
class FoldResult:
    """Held-out test error of one trained fold, in both unit conventions."""

    fold: int
    mse_norm: float
    seed: int
    cfg: CnnConfig

    @property
    def mse_degps(self) -> float:
        return self.mse_norm * SPEED_MAX_DEGPS**2

    @property
    def rmse_degps(self) -> float:
        return float(np.sqrt(self.mse_degps))


@dataclass(frozen=True)
class BoxStats:
    """Five-number box-plot summary with Tukey 1.5*IQR whiskers."""

    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


def box_stats(values) -> BoxStats:
    """Median/quartiles by linear interpolation; whiskers at the most extreme
    data within 1.5*IQR of the quartiles; everything beyond is an outlier."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("box_stats needs at least one value")
    q1, med, q3 = (float(q) for q in np.percentile(arr, [25.0, 50.0, 75.0]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisker_lo = float(inside.min())
    whisker_hi = float(inside.max())
    outliers = tuple(sorted(float(v) for v in arr[(arr < lo_fence) | (arr > hi_fence)]))
    return BoxStats(median=med, q1=q1, q3=q3,
                    whisker_lo=whisker_lo, whisker_hi=whisker_hi, outliers=outliers)


def fold_seed(master_seed: int, param_name: str, param_value: int, fold: int) -> int:
    """Independent deterministic seed for one (sweep value, fold) run."""
    return derive_seed(master_seed, param_name, param_value, fold)


def run_fold(
    split: FoldSplit, ccfg: CnnConfig, tcfg: TrainConfig
) -> tuple[FoldResult, TrainHistory]:
    """Train on the fold's 17 acquisitions, test on its held-out one."""
    train_set = build_sample_set(split.train, ccfg.n_frames, ccfg.subsample)
    test_set = build_sample_set([split.test], ccfg.n_frames, ccfg.subsample)
    rng = Rng(derive_seed(tcfg.seed, "init"))
    params = build_model(ccfg, rng)
    params, history = train(params, train_set, test_set, tcfg)
    mse = history.test_mse_norm[-1] if tcfg.epochs > 0 else evaluate_mse(params, test_set)
    result = FoldResult(fold=split.fold, mse_norm=mse, seed=tcfg.seed, cfg=ccfg)
    return result, history


def sweep_config(param_name: str, value: int) -> CnnConfig:
    if param_name == SWEEP_NF:
        return CnnConfig(n_frames=value, subsample=FIXED_NR_FOR_NF_SWEEP)
    if param_name == SWEEP_NR:
        return CnnConfig(n_frames=FIXED_NF_FOR_NR_SWEEP, subsample=value)
    raise ValueError(f"unknown sweep parameter {param_name!r}")


def _run_point(args) -> tuple[int, int, FoldResult]:
    value, split, ccfg, tcfg = args
    result, _ = run_fold(split, ccfg, tcfg)
    return value, split.fold, result


def ablate(
    param_name: str,
    values,
    acqs: list[Acquisition],
    tcfg: TrainConfig,
    jobs: int = 1,
) -> list[tuple[int, list[FoldResult], BoxStats]]:
    """Full 6-fold run for every sweep value.

    tcfg.seed acts as the master seed; each run's own seed comes from
    fold_seed(). With jobs > 1 the (value, fold) points run in parallel
    processes; aggregation is by (value, fold) key, so the output does not
    depend on completion order.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if param_name == SWEEP_NR and not set(values) <= set(NR_SWEEP_VALUES):
        raise ValueError(f"nr sweep values must be within {set(NR_SWEEP_VALUES)}")
    if param_name == SWEEP_NF and any(v < 1 for v in values):
        raise ValueError("nf sweep values must be >= 1")
    folds = split_folds(acqs)
    tasks = []
    for value in values:
        ccfg = sweep_config(param_name, value)
        for split in folds:
            seed = fold_seed(tcfg.seed, param_name, value, split.fold)
            tasks.append((value, split, ccfg, with_seed(tcfg, seed)))

    results: dict[tuple[int, int], FoldResult] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for value, fold, result in pool.map(_run_point, tasks):
                results[(value, fold)] = result
    else:
        for task in tasks:
            value, fold, result = _run_point(task)
            results[(value, fold)] = result

    table = []
    for value in values:
        fold_results = [results[(value, split.fold)] for split in folds]
        stats = box_stats([r.mse_norm for r in fold_results])
        table.append((value, fold_results, stats))
    return table


def results_csv(param_name: str, table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_HEADER)
    for value, fold_results, _ in table:
        for r in fold_results:
            writer.writerow(
                [param_name, value, r.fold, r.seed,
                 repr(r.mse_norm), repr(r.mse_degps), repr(r.rmse_degps)]
            )
    return buf.getvalue()


def boxstats_csv(table, unit: str = "norm") -> str:
    """BoxStats rows per sweep value; unit 'norm' or 'degps' scales the MSEs."""
    scale = _unit_scale(unit)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BOXSTATS_HEADER)
    for value, _, stats in table:
        writer.writerow(
            [value,
             repr(stats.median * scale), repr(stats.q1 * scale), repr(stats.q3 * scale),
             repr(stats.whisker_lo * scale), repr(stats.whisker_hi * scale),
             len(stats.outliers)]
        )
    return buf.getvalue()


def _unit_scale(unit: str) -> float:
    if unit == "norm":
        return 1.0
    if unit == "degps":
        return SPEED_MAX_DEGPS**2
    raise ValueError("unit must be 'norm' or 'degps'")


def write_results_csv(path, param_name: str, table) -> None:
    atomic_write_text(path, results_csv(param_name, table))


def write_boxstats_csv(path, table, unit: str = "norm") -> None:
    atomic_write_text(path, boxstats_csv(table, unit))


def load_results_csv(path) -> dict[int, list[float]]:
    """Read a results CSV back into {param_value: [mse_norm per fold]}."""
    grouped: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULTS_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"results file is missing columns {sorted(missing)}")
        for row in reader:
            grouped.setdefault(int(row["param_value"]), []).append(float(row["mse_norm"]))
    if not grouped:
        raise ValueError("results file holds no rows")
    return grouped


def evaluate_model(params: ModelParams, cfg: CnnConfig, acqs: list[Acquisition]) -> FoldResult:
    """MSE of a trained model over the windows of the given acquisitions."""
    sample_set = build_sample_set(acqs, cfg.n_frames, cfg.subsample)
    mse = evaluate_mse(params, sample_set)
    return FoldResult(fold=-1, mse_norm=mse, seed=-1, cfg=cfg)
