"""Dense-tensor kernels for the odometry CNN: conv2d, 2x2 max pooling,
dense (fully-connected) and ReLU, each with an exact analytic backward.

Tensors are contiguous row-major numpy arrays; float32 is the training
precision and float64 is used on verification paths. Conventions:

* conv2d: 5x5 kernels, stride 1, zero "same" padding of 2, so spatial dims
  are preserved. Kernels are (C_out, C_in, 5, 5).
* maxpool2: 2x2 windows, stride 2, ceil semantics (odd trailing dims form
  partial windows). Ties resolve to the first cell in window row-major
  order. The argmax map recorded by the forward routes the backward.
* ReLU subgradient at exactly 0 is 0.

All ops are pure functions of their inputs: inputs are never mutated,
identical inputs give bitwise identical results, and any NaN/Inf produced is
raised as an error rather than propagated. Ops that produce large arrays
accept an optional preallocated ``out`` so a training loop can recycle
buffers between steps; passing ``out`` changes where the result lives, not
what it is.

The convolution and pooling inner loops are numba-compiled direct loops
(specialized for the fixed 5x5 kernel) instead of im2col+GEMM: at
24x32-and-below frame sizes the patch-matrix materialization costs more
memory traffic than the arithmetic itself.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

KERNEL = 5
PAD = (KERNEL - 1) // 2


class ShapeError(ValueError):
    """Operands have inconsistent shapes."""


class NonFiniteError(FloatingPointError):
    """A kernel produced or received NaN/Inf."""


def ensure_finite(name: str, arr: np.ndarray) -> None:
    """Raise unless every element is finite.

    Fast path: a float64 sum stays finite iff all elements are (float64
    cannot overflow on sums of float32 data; huge float64 data could, so a
    suspicious sum falls back to the exact elementwise check).
    """
    if math.isfinite(float(arr.sum(dtype=np.float64))):
        return
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite values")


def _out_buffer(out: np.ndarray | None, shape: tuple[int, ...], dtype) -> np.ndarray:
    if out is None:
        return np.empty(shape, dtype=dtype)
    if out.shape != shape or out.dtype != dtype:
        raise ShapeError(f"out buffer is {out.dtype}{out.shape}, need {dtype}{shape}")
    return out


def _as_batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    """Promote a single-sample tensor to a batch of one."""
    if x.ndim == ndim:
        return x, False
    if x.ndim == ndim - 1:
        return x[None], True
    raise ShapeError(f"expected {ndim - 1}D or {ndim}D tensor, got {x.ndim}D")


def pad_same(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Zero 'same' padding of 2 on each spatial border of (B, C, H, W).

    With a reused ``out`` buffer only the interior is rewritten; the zero
    border persists from the first use.
    """
    b, c, h, w = x.shape
    shape = (b, c, h + 2 * PAD, w + 2 * PAD)
    if out is None:
        xp = np.zeros(shape, dtype=x.dtype)
    else:
        if out.shape != shape or out.dtype != x.dtype:
            raise ShapeError(f"out buffer is {out.dtype}{out.shape}, need {x.dtype}{shape}")
        xp = out
    xp[:, :, PAD : PAD + h, PAD : PAD + w] = x
    return xp


@nb.njit(cache=True)
def _conv5_fwd(xp, w, bias, y):  # pragma: no cover - exercised via conv2d_forward
    b_n, c_n = xp.shape[0], xp.shape[1]
    co_n = w.shape[0]
    h, w_n = y.shape[2], y.shape[3]
    for b in range(b_n):
        for co in range(co_n):
            for yy in range(h):
                row = y[b, co, yy]
                bv = bias[co]
                for x in range(w_n):
                    row[x] = bv
                for c in range(c_n):
                    for i in range(KERNEL):
                        xrow = xp[b, c, yy + i]
                        w0 = w[co, c, i, 0]; w1 = w[co, c, i, 1]; w2 = w[co, c, i, 2]
                        w3 = w[co, c, i, 3]; w4 = w[co, c, i, 4]
                        for x in range(w_n):
                            row[x] += (w0 * xrow[x] + w1 * xrow[x + 1] + w2 * xrow[x + 2]
                                       + w3 * xrow[x + 3] + w4 * xrow[x + 4])


@nb.njit(cache=True, fastmath=True)
def _conv5_grads(xp, dz, dw, db):  # pragma: no cover - via conv2d_backward
    b_n, c_n = xp.shape[0], xp.shape[1]
    co_n, h, w_n = dz.shape[1], dz.shape[2], dz.shape[3]
    for b in range(b_n):
        for co in range(co_n):
            s = 0.0
            for yy in range(h):
                dzrow = dz[b, co, yy]
                for x in range(w_n):
                    s += dzrow[x]
            db[co] += s
            for c in range(c_n):
                for i in range(KERNEL):
                    t0 = 0.0; t1 = 0.0; t2 = 0.0; t3 = 0.0; t4 = 0.0
                    for yy in range(h):
                        dzrow = dz[b, co, yy]
                        xrow = xp[b, c, yy + i]
                        for x in range(w_n):
                            d = dzrow[x]
                            t0 += d * xrow[x]
                            t1 += d * xrow[x + 1]
                            t2 += d * xrow[x + 2]
                            t3 += d * xrow[x + 3]
                            t4 += d * xrow[x + 4]
                    dw[co, c, i, 0] += t0; dw[co, c, i, 1] += t1
                    dw[co, c, i, 2] += t2; dw[co, c, i, 3] += t3
                    dw[co, c, i, 4] += t4


@nb.njit(cache=True)
def _conv5_dx(dzp, w, dx):  # pragma: no cover - via conv2d_backward
    b_n, c_n = dx.shape[0], dx.shape[1]
    co_n = w.shape[0]
    h, w_n = dx.shape[2], dx.shape[3]
    for b in range(b_n):
        for c in range(c_n):
            for yy in range(h):
                row = dx[b, c, yy]
                for x in range(w_n):
                    row[x] = 0.0
                for co in range(co_n):
                    for i in range(KERNEL):
                        drow = dzp[b, co, yy + i]
                        w0 = w[co, c, 4 - i, 4]; w1 = w[co, c, 4 - i, 3]
                        w2 = w[co, c, 4 - i, 2]; w3 = w[co, c, 4 - i, 1]
                        w4 = w[co, c, 4 - i, 0]
                        for x in range(w_n):
                            row[x] += (w0 * drow[x] + w1 * drow[x + 1] + w2 * drow[x + 2]
                                       + w3 * drow[x + 3] + w4 * drow[x + 4])


def conv2d_forward(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    x_padded: np.ndarray | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Stride-1 same-padding cross-correlation.

    x: (C_in, H, W) or (B, C_in, H, W); kernels: (C_out, C_in, 5, 5);
    bias: (C_out,). Returns matching (C_out, H, W) or (B, C_out, H, W).
    `x_padded` may pass a precomputed pad_same(x) to skip re-padding.
    """
    x, single = _as_batched(x, 4)
    _check_conv_shapes(x, kernels, bias)
    b, _, h, w = x.shape
    c_out = kernels.shape[0]
    xp = pad_same(x) if x_padded is None else x_padded
    y = _out_buffer(out, (b, c_out, h, w), x.dtype)
    _conv5_fwd(xp, kernels, bias, y)
    ensure_finite("conv2d output", y)
    return y[0] if single else y


def conv2d_backward(
    x: np.ndarray,
    kernels: np.ndarray,
    d_out: np.ndarray,
    x_padded: np.ndarray | None = None,
    need_dx: bool = True,
    dx_out: np.ndarray | None = None,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward: returns (d_x, d_kernels, d_bias).

    d_x is skipped (None) when need_dx is false, e.g. for the first layer.
    """
    x, single = _as_batched(x, 4)
    d_out, _ = _as_batched(d_out, 4)
    _check_conv_shapes(x, kernels, None)
    b, c_in, h, w = x.shape
    c_out = kernels.shape[0]
    if d_out.shape != (b, c_out, h, w):
        raise ShapeError(
            f"upstream gradient shape {d_out.shape} does not match output {(b, c_out, h, w)}"
        )
    xp = pad_same(x) if x_padded is None else x_padded
    d_kernels = np.zeros_like(kernels)
    d_bias = np.zeros(c_out, dtype=kernels.dtype)
    _conv5_grads(xp, np.ascontiguousarray(d_out), d_kernels, d_bias)
    ensure_finite("conv2d backward d_kernels", d_kernels)
    ensure_finite("conv2d backward d_bias", d_bias)
    if not need_dx:
        return None, d_kernels, d_bias

    d_x = _out_buffer(dx_out, x.shape, x.dtype)
    _conv5_dx(pad_same(d_out), kernels, d_x)
    ensure_finite("conv2d backward d_x", d_x)
    return (d_x[0] if single else d_x), d_kernels, d_bias


def _check_conv_shapes(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray | None) -> None:
    if kernels.ndim != 4 or kernels.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(
            f"kernels must be (C_out, C_in, {KERNEL}, {KERNEL}), got {kernels.shape}"
        )
    if x.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels, kernels expect {kernels.shape[1]}"
        )
    if bias is not None and bias.shape != (kernels.shape[0],):
        raise ShapeError(f"bias must be ({kernels.shape[0]},), got {bias.shape}")


@nb.njit(cache=True)
def _pool2_fwd(x, y, arg):  # pragma: no cover - via maxpool2_forward
    b_n, c_n, h, w = x.shape
    ho, wo = y.shape[2], y.shape[3]
    for b in range(b_n):
        for c in range(c_n):
            for oy in range(ho):
                y0 = 2 * oy
                for ox in range(wo):
                    x0 = 2 * ox
                    best = x[b, c, y0, x0]
                    bidx = 0
                    if x0 + 1 < w and x[b, c, y0, x0 + 1] > best:
                        best = x[b, c, y0, x0 + 1]
                        bidx = 1
                    if y0 + 1 < h:
                        if x[b, c, y0 + 1, x0] > best:
                            best = x[b, c, y0 + 1, x0]
                            bidx = 2
                        if x0 + 1 < w and x[b, c, y0 + 1, x0 + 1] > best:
                            best = x[b, c, y0 + 1, x0 + 1]
                            bidx = 3
                    y[b, c, oy, ox] = best
                    arg[b, c, oy, ox] = bidx


@nb.njit(cache=True)
def _pool2_bwd(arg, d_out, d_x):  # pragma: no cover - via maxpool2_backward
    b_n, c_n, ho, wo = d_out.shape
    h, w = d_x.shape[2], d_x.shape[3]
    for b in range(b_n):
        for c in range(c_n):
            for yy in range(h):
                row = d_x[b, c, yy]
                for x in range(w):
                    row[x] = 0.0
            for oy in range(ho):
                for ox in range(wo):
                    a = arg[b, c, oy, ox]
                    d_x[b, c, 2 * oy + (a >> 1), 2 * ox + (a & 1)] = d_out[b, c, oy, ox]


def maxpool2_forward(
    x: np.ndarray,
    out: np.ndarray | None = None,
    arg_out: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pool with ceil semantics.

    Returns (pooled, argmax) where argmax holds the flat in-window index
    (0..3, row-major) of each selected element; ties keep the first.
    """
    x, single = _as_batched(x, 4)
    b, c, h, w = x.shape
    if h == 0 or w == 0:
        raise ShapeError(f"empty spatial dims: {x.shape}")
    ho, wo = -(-h // 2), -(-w // 2)
    y = _out_buffer(out, (b, c, ho, wo), x.dtype)
    arg = _out_buffer(arg_out, (b, c, ho, wo), np.int8)
    _pool2_fwd(np.ascontiguousarray(x), y, arg)
    ensure_finite("maxpool2 output", y)
    if single:
        return y[0], arg[0]
    return y, arg


def maxpool2_backward(
    argmax: np.ndarray,
    input_shape: tuple[int, ...],
    d_out: np.ndarray,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Route the upstream gradient to the recorded argmax positions."""
    single = len(input_shape) == 3
    if single:
        input_shape = (1,) + tuple(input_shape)
    argmax, _ = _as_batched(argmax, 4)
    d_out, _ = _as_batched(d_out, 4)
    b, c, h, w = input_shape
    ho, wo = -(-h // 2), -(-w // 2)
    if d_out.shape != (b, c, ho, wo):
        raise ShapeError(
            f"upstream gradient shape {d_out.shape} does not match pooled {(b, c, ho, wo)}"
        )
    d_x = _out_buffer(out, tuple(input_shape), d_out.dtype)
    _pool2_bwd(argmax, np.ascontiguousarray(d_out), d_x)
    ensure_finite("maxpool2 backward d_x", d_x)
    return d_x[0] if single else d_x


def dense_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """y = W x + b for x of shape (n,) or a batch (B, n); W is (m, n)."""
    x, single = _as_batched(x, 2)
    m, n = weight.shape
    if x.shape[1] != n:
        raise ShapeError(f"input width {x.shape[1]} does not match weight width {n}")
    if bias.shape != (m,):
        raise ShapeError(f"bias must be ({m},), got {bias.shape}")
    y = _out_buffer(out, (x.shape[0], m), x.dtype)
    np.matmul(x, weight.T, out=y)
    y += bias
    ensure_finite("dense output", y)
    return y[0] if single else y


def dense_backward(
    x: np.ndarray,
    weight: np.ndarray,
    d_out: np.ndarray,
    dx_out: np.ndarray | None = None,
    dw_out: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of dense_forward: returns (d_x, d_weight, d_bias)."""
    x, single = _as_batched(x, 2)
    d_out, _ = _as_batched(d_out, 2)
    m, n = weight.shape
    if d_out.shape != (x.shape[0], m):
        raise ShapeError(
            f"upstream gradient shape {d_out.shape} does not match output ({x.shape[0]}, {m})"
        )
    d_weight = _out_buffer(dw_out, weight.shape, weight.dtype)
    np.matmul(d_out.T, x, out=d_weight)
    d_bias = d_out.sum(axis=0)
    d_x = _out_buffer(dx_out, x.shape, x.dtype)
    np.matmul(d_out, weight, out=d_x)
    for name, g in (("d_x", d_x), ("d_weight", d_weight), ("d_bias", d_bias)):
        ensure_finite(f"dense backward {name}", g)
    return (d_x[0] if single else d_x), d_weight, d_bias


def relu_forward(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """max(x, 0) elementwise; ``out=x`` rectifies in place.

    In-place use loses the pre-activation, which is safe here: the backward
    mask (x > 0) is identical before and after rectification.
    """
    ensure_finite("relu input", x)
    if out is None:
        return np.maximum(x, 0)
    if out.shape != x.shape or out.dtype != x.dtype:
        raise ShapeError(f"out buffer is {out.dtype}{out.shape}, need {x.dtype}{x.shape}")
    return np.maximum(x, 0, out=out)


def relu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Pass-through where x > 0, zero elsewhere (including exactly 0).

    x may be either the pre-activation or the rectified output; the masks
    agree."""
    if x.shape != d_out.shape:
        raise ShapeError(f"shape mismatch: x {x.shape} vs upstream {d_out.shape}")
    d_x = d_out * (x > 0)
    ensure_finite("relu backward d_x", d_x)
    return d_x
