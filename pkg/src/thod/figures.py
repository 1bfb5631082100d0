"""Report figures rendered next to the CSV outputs.

Box plots are drawn from the same BoxStats the CSVs carry (red median line,
Tukey whiskers), so figure and delimited output can never disagree.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data import SPEED_MAX_DEGPS
from .harness import BoxStats

_PARAM_LABELS = {
    "nf": "consecutive input frames",
    "nr": "resolution subsampling factor",
}


def save_box_figure(path, param_name: str, table, unit: str = "norm") -> None:
    """Box plot of the 6-fold test MSE per sweep value.

    `table` rows are (value, fold_results, BoxStats) as produced by ablate().
    """
    scale = 1.0 if unit == "norm" else SPEED_MAX_DEGPS**2
    boxes = []
    for value, fold_results, stats in table:
        boxes.append(
            {
                "label": str(value),
                "med": stats.median * scale,
                "q1": stats.q1 * scale,
                "q3": stats.q3 * scale,
                "whislo": stats.whisker_lo * scale,
                "whishi": stats.whisker_hi * scale,
                "fliers": [v * scale for v in stats.outliers],
            }
        )
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bxp(boxes, medianprops={"color": "red"})
    ax.set_xlabel(_PARAM_LABELS.get(param_name, param_name))
    unit_label = "normalized units" if unit == "norm" else "(deg/s)^2"
    ax.set_ylabel(f"test MSE [{unit_label}]")
    ax.set_title("6-fold test MSE")
    ax.grid(True, axis="y", alpha=0.3)
    _save(fig, path)


def save_stats_figure(path, stats_by_value: dict[int, BoxStats], param_name: str,
                      unit: str = "norm") -> None:
    table = [(value, [], stats) for value, stats in sorted(stats_by_value.items())]
    save_box_figure(path, param_name, table, unit)


def save_history_figure(path, train_loss, test_mse_norm) -> None:
    """Training loss and held-out MSE per epoch."""
    epochs = range(1, len(train_loss) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train_loss, label="train loss", color="tab:blue")
    ax.plot(epochs, test_mse_norm, label="test MSE (normalized)", color="tab:orange")
    ax.set_xlabel("epoch")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def _save(fig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    fig.savefig(tmp, dpi=150, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)
