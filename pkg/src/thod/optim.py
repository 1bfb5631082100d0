"""Adam optimizer over ModelParams trees.

Standard bias-corrected Adam; epsilon is added outside the square root:
p -= lr * m_hat / (sqrt(v_hat) + eps). The per-tensor update is a fused
single-pass compiled loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .model import ModelParams
from .ops import ShapeError


@dataclass(frozen=True)
class AdamState:
    m: ModelParams
    v: ModelParams
    t: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        zeros = params.map(np.zeros_like)
        return cls(m=zeros, v=zeros.map(np.copy), t=0)


@nb.njit(cache=True)
def _adam_kernel(p, g, m, v, out_p, out_m, out_v, c1, c2, lr, beta1, beta2, eps):
    # pragma: no cover - exercised via adam_update_tensor
    for i in range(p.size):
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        out_m[i] = mi
        out_v[i] = vi
        out_p[i] = p[i] - lr * (mi / c1) / (math.sqrt(vi / c2) + eps)


def adam_update_tensor(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, in_place=False):
    """One Adam step for a single tensor; t is the post-increment step count
    (1 on the first update). Returns (p', m', v'); with in_place the inputs
    are overwritten (the elementwise kernel is alias-safe)."""
    if in_place:
        out_p, out_m, out_v = p, m, v
    else:
        out_p, out_m, out_v = np.empty_like(p), np.empty_like(m), np.empty_like(v)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    _adam_kernel(
        p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
        out_p.reshape(-1), out_m.reshape(-1), out_v.reshape(-1),
        c1, c2, lr, beta1, beta2, eps,
    )
    return out_p, out_m, out_v


def adam_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    in_place: bool = False,
) -> tuple[ModelParams, AdamState]:
    """Apply one update to every tensor; returns new (params, state).

    With in_place the parameter and moment arrays are mutated and the input
    containers returned; callers then own the only copy (the training loop
    uses this on its private parameter copy).
    """
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.tensors():
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise ShapeError(f"gradient {name} has shape {g.shape}, param is {p.shape}")
        new_p[name], new_m[name], new_v[name] = adam_update_tensor(
            p, g, getattr(state.m, name), getattr(state.v, name), t, lr,
            beta1, beta2, eps, in_place=in_place,
        )
    if in_place:
        return params, AdamState(m=state.m, v=state.v, t=t)
    return ModelParams(**new_p), AdamState(m=ModelParams(**new_m), v=ModelParams(**new_v), t=t)
