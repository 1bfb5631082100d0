"""Regression losses over a batch of scalar predictions.

Both losses reduce by batch mean and return the gradient with respect to the
predictions (the 1/B factor included), ready to feed the network backward.
"""

from __future__ import annotations

import numpy as np

from .ops import ensure_finite

# Below this threshold the adaptive berHu cutoff is treated as zero and the
# loss degenerates to plain L1 (avoids dividing by a vanishing c).
C_DEGENERATE = 1e-12


def _berhu_given_c(preds: np.ndarray, labels: np.ndarray, c: float):
    """berHu (inverted Huber) with a fixed cutoff, c treated as constant.

    Per sample: |r| for |r| <= c, else (r^2 + c^2) / (2c); both branches
    equal c at |r| = c. Returns (mean loss, d mean loss / d preds).
    """
    r = preds - labels
    a = np.abs(r)
    n = r.shape[0]
    if c <= C_DEGENERATE:
        return float(a.mean()), np.sign(r) / n
    small = a <= c
    per = np.where(small, a, (r * r + c * c) / (2.0 * c))
    grad = np.where(small, np.sign(r), r / c) / n
    return float(per.mean()), grad


def berhu_loss(preds: np.ndarray, labels: np.ndarray):
    """Inverted Huber loss with per-batch adaptive cutoff.

    The cutoff is c = 0.2 * max_i |pred_i - label_i|, recomputed from each
    mini-batch and frozen when differentiating (the max coupling carries no
    gradient). Returns (loss, d loss/d preds, c).
    """
    preds, labels = _check_batch(preds, labels)
    c = 0.2 * float(np.abs(preds - labels).max())
    loss, grad = _berhu_given_c(preds, labels, c)
    ensure_finite("berhu gradient", grad)
    return loss, grad, c


def mse_loss(preds: np.ndarray, labels: np.ndarray):
    """Mean squared error; gradient is 2r/B. Returns (loss, d loss/d preds)."""
    preds, labels = _check_batch(preds, labels)
    r = preds - labels
    loss = float((r * r).mean())
    grad = 2.0 * r / r.shape[0]
    ensure_finite("mse gradient", grad)
    return loss, grad


def _check_batch(preds: np.ndarray, labels: np.ndarray):
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.ndim != 1 or labels.ndim != 1:
        raise ValueError("predictions and labels must be 1D")
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape[0]} vs {labels.shape[0]}")
    if preds.shape[0] == 0:
        raise ValueError("empty batch")
    return preds, labels
