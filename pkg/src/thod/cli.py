"""Command-line interface: dataset synthesis/import, training, evaluation,
ablation sweeps and box statistics.

Every seeded subcommand is end-to-end reproducible: rerunning the same
invocation produces byte-identical checkpoints and CSVs. Outputs are written
atomically. The default data directory may be set via the THOD_DATA_DIR
environment variable.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import harness, synth
from .data import (
    DatasetError,
    add_to_dataset,
    build_sample_set,
    import_csv,
    load_dataset,
    save_dataset,
    split_folds,
)
from .model import CnnConfig, build_model, load_checkpoint, save_checkpoint
from .rng import Rng, derive_seed
from .train import TrainConfig, train, with_seed

DATA_DIR_ENV = "THOD_DATA_DIR"


class CliError(Exception):
    """User-facing error: printed as a one-line diagnostic, exit code 1."""


def _data_dir(args) -> Path:
    if args.data is not None:
        return Path(args.data)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    raise CliError(f"no dataset directory: pass --data or set {DATA_DIR_ENV}")


def _add_data_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help=f"dataset directory (default: ${DATA_DIR_ENV})")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=40, help="training epochs (default 40)")
    p.add_argument("--lr", type=float, default=0.001, help="Adam learning rate (default 0.001)")
    p.add_argument("--batch", type=int, default=32, help="mini-batch size (default 32)")
    p.add_argument("--loss", choices=["berhu", "mse"], default="berhu",
                   help="training loss (default berhu)")


def _train_config(args, seed: int) -> TrainConfig:
    if args.epochs < 0:
        raise CliError("epochs must be >= 0")
    if args.lr <= 0:
        raise CliError("lr must be > 0")
    if args.batch < 1:
        raise CliError("batch must be >= 1")
    return TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs,
                       loss=args.loss, seed=seed)


def _cnn_config(nf: int, nr: int) -> CnnConfig:
    if nf < 1:
        raise CliError("nf must be ≥ 1")
    if nr not in (1, 2, 3):
        raise CliError("nr must be one of 1, 2, 3")
    return CnnConfig(n_frames=nf, subsample=nr)


def cmd_synth(args) -> int:
    if args.frames < 1:
        raise CliError("frames must be >= 1")
    if args.segments < 1:
        raise CliError("segments must be >= 1")
    if args.noise_std < 0:
        raise CliError("noise-std must be >= 0")
    acqs = synth.make_default_dataset(
        seed=args.seed,
        frames_per_acq=args.frames,
        n_segments=args.segments,
        noise_std=args.noise_std,
        fov_deg=args.fov,
    )
    out = Path(args.out)
    save_dataset(out, acqs)
    total = sum(len(a) for a in acqs)
    print(f"wrote {len(acqs)} acquisitions ({total} frames) to {out}")
    return 0


def cmd_import(args) -> int:
    if args.fps <= 0:
        raise CliError("fps must be > 0")
    acq = import_csv(args.csv, env=args.env, fps=args.fps, acq_id=args.id)
    root = _data_dir(args)
    add_to_dataset(root, acq)
    print(f"imported {acq.id!r}: {len(acq)} frames, env {acq.env}, into {root}")
    return 0


def _resolve_test_split(acqs, args):
    if getattr(args, "test_acq", None):
        test = [a for a in acqs if a.id == args.test_acq]
        if not test:
            raise CliError(f"no acquisition with id {args.test_acq!r}")
        return test[0], [a for a in acqs if a.id != args.test_acq]
    folds = split_folds(acqs)
    if not 0 <= args.fold < len(folds):
        raise CliError(f"fold must be in 0..{len(folds) - 1}")
    split = folds[args.fold]
    return split.test, split.train


def cmd_train(args) -> int:
    ccfg = _cnn_config(args.nf, args.nr)
    tcfg = _train_config(args, args.seed)
    acqs = load_dataset(_data_dir(args))
    test_acq, train_acqs = _resolve_test_split(acqs, args)
    train_set = build_sample_set(train_acqs, ccfg.n_frames, ccfg.subsample)
    test_set = build_sample_set([test_acq], ccfg.n_frames, ccfg.subsample)

    rng = Rng(derive_seed(tcfg.seed, "init"))
    params = build_model(ccfg, rng)
    params, history = train(params, train_set, test_set, tcfg)

    out = Path(args.out)
    save_checkpoint(out, ccfg, params)
    history_path = Path(args.history) if args.history else out.with_suffix(".history.csv")
    history.save_csv(history_path)
    wrote = [str(out), str(history_path)]
    if args.figures and tcfg.epochs > 0:
        from .figures import save_history_figure

        fig_path = history_path.with_suffix(".png")
        save_history_figure(fig_path, history.train_loss, history.test_mse_norm)
        wrote.append(str(fig_path))
    final = history.test_mse_norm[-1] if history.test_mse_norm else float("nan")
    print(
        f"trained on {len(train_set)} samples, tested on {test_acq.id!r} "
        f"({len(test_set)} samples): final test MSE {final:.6g} (normalized); "
        f"wrote {', '.join(wrote)}"
    )
    return 0


def cmd_eval(args) -> int:
    ccfg, params = load_checkpoint(args.model)
    acqs = load_dataset(_data_dir(args))
    if args.acq:
        subset = [a for a in acqs if a.id == args.acq]
        if not subset:
            raise CliError(f"no acquisition with id {args.acq!r}")
        label = args.acq
    else:
        folds = split_folds(acqs)
        if not 0 <= args.fold < len(folds):
            raise CliError(f"fold must be in 0..{len(folds) - 1}")
        subset = [folds[args.fold].test]
        label = f"fold {args.fold} ({subset[0].id})"
    result = harness.evaluate_model(params, ccfg, subset)
    print(
        f"eval on {label}: mse_norm={result.mse_norm!r} "
        f"mse_degps={result.mse_degps!r} rmse_degps={result.rmse_degps!r}"
    )
    if args.out:
        table = [(0, [result], harness.box_stats([result.mse_norm]))]
        harness.write_results_csv(args.out, "eval", table)
        print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    if args.param == harness.SWEEP_NF:
        default_values = harness.NF_SWEEP_VALUES
    else:
        default_values = harness.NR_SWEEP_VALUES
    if args.values:
        try:
            values = [int(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise CliError(f"bad --values list {args.values!r}") from None
    else:
        values = list(default_values)
    if not values:
        raise CliError("values list is empty")
    if args.param == harness.SWEEP_NR and not set(values) <= {1, 2, 3}:
        raise CliError("nr values must be within {1, 2, 3}")
    if args.param == harness.SWEEP_NF and any(v < 1 for v in values):
        raise CliError("nf must be ≥ 1")
    if args.jobs < 1:
        raise CliError("jobs must be >= 1")
    tcfg = _train_config(args, args.seed)
    acqs = load_dataset(_data_dir(args))
    table = harness.ablate(args.param, values, acqs, tcfg, jobs=args.jobs)

    out = Path(args.out)
    harness.write_results_csv(out, args.param, table)
    stats_path = out.with_name(out.stem + "_stats.csv")
    harness.write_boxstats_csv(stats_path, table, unit=args.unit)
    wrote = [str(out), str(stats_path)]
    if args.figures:
        from .figures import save_box_figure

        fig_path = out.with_name(out.stem + "_boxplot.png")
        save_box_figure(fig_path, args.param, table, unit=args.unit)
        wrote.append(str(fig_path))
    n_runs = sum(len(rs) for _, rs, _ in table)
    medians = ", ".join(f"{v}: {s.median:.6g}" for v, _, s in table)
    print(f"{n_runs} fold runs done; median test MSE (normalized) per value: {medians}")
    print(f"wrote {', '.join(wrote)}")
    return 0


def cmd_stats(args) -> int:
    grouped = harness.load_results_csv(args.results)
    table = [
        (value, [], harness.box_stats(mses)) for value, mses in sorted(grouped.items())
    ]
    harness.write_boxstats_csv(args.out, table, unit=args.unit)
    wrote = [str(args.out)]
    if args.figures:
        from .figures import save_box_figure

        fig_path = Path(args.out).with_suffix(".png")
        save_box_figure(fig_path, args.param_name, table, unit=args.unit)
        wrote.append(str(fig_path))
    print(f"wrote {', '.join(wrote)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thod",
        description="Rotational odometry from ultra-low-resolution thermal frames.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the default synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--frames", type=int, default=600,
                   help="frames per acquisition (default 600)")
    p.add_argument("--segments", type=int, default=10,
                   help="constant-speed segments per acquisition (default 10)")
    p.add_argument("--noise-std", type=float, default=0.08,
                   help="sensor noise sigma in degrees C (default 0.08)")
    p.add_argument("--fov", type=float, default=synth.DEFAULT_FOV_DEG,
                   help="azimuth field of view in degrees (default 110)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("import", help="import a CSV acquisition (768 pixels + label per row)")
    p.add_argument("--csv", required=True, help="input CSV file")
    _add_data_flag(p)
    p.add_argument("--env", required=True,
                   help="environment tag (e.g. Laboratory, Garden)")
    p.add_argument("--id", help="acquisition id (default: CSV stem)")
    p.add_argument("--fps", type=float, default=8.0, help="frame rate (default 8)")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _add_data_flag(p)
    p.add_argument("--nf", type=int, default=3, help="stacked consecutive frames (default 3)")
    p.add_argument("--nr", type=int, default=1, help="resolution subsampling factor (default 1)")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
    p.add_argument("--fold", type=int, default=0,
                   help="Garden fold whose acquisition is held out as test set (default 0)")
    p.add_argument("--test-acq", help="hold out this acquisition id instead of a Garden fold")
    p.add_argument("--out", required=True, help="checkpoint path (.thod)")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.add_argument("--no-figures", dest="figures", action="store_false",
                   help="skip the history figure")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out data")
    p.add_argument("--model", required=True, help="checkpoint path")
    _add_data_flag(p)
    p.add_argument("--fold", type=int, default=0, help="Garden fold to test on (default 0)")
    p.add_argument("--acq", help="evaluate on this acquisition id instead")
    p.add_argument("--out", help="optional results CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a 6-fold ablation sweep")
    p.add_argument("--param", required=True, choices=[harness.SWEEP_NF, harness.SWEEP_NR],
                   help="sweep parameter: nf (frame count) or nr (resolution factor)")
    p.add_argument("--values", help="comma-separated sweep values "
                                    "(default: 2,3,4,5,6,7 for nf; 1,2,3 for nr)")
    _add_data_flag(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel fold runs (default 1)")
    p.add_argument("--unit", choices=["norm", "degps"], default="norm",
                   help="unit for box statistics (default norm)")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--no-figures", dest="figures", action="store_false",
                   help="skip the box-plot figure")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", help="box statistics from an existing results CSV")
    p.add_argument("--results", required=True, help="results CSV from ablate")
    p.add_argument("--out", required=True, help="box statistics CSV path")
    p.add_argument("--unit", choices=["norm", "degps"], default="norm",
                   help="unit for box statistics (default norm)")
    p.add_argument("--param-name", default="value", help="x-axis label for the figure")
    p.add_argument("--no-figures", dest="figures", action="store_false",
                   help="skip the box-plot figure")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
