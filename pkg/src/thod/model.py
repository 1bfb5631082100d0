"""The rotational-odometry CNN: two 5x5 conv layers with a 2x2 max pool in
between, two fully-connected layers (120 and 80 ReLU neurons) and a linear
scalar output head.

The network is parameterized by the number of stacked input frames (input
channels) and the resolution subsampling factor, which fix every tensor
shape. Forward/backward are pure functions over an immutable ModelParams
value; backward consumes the cache produced by the matching forward call.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass

import numpy as np

from . import ops
from .rng import Rng

SENSOR_H = 24
SENSOR_W = 32

CHECKPOINT_MAGIC = b"THOD"
CHECKPOINT_VERSION = 1

# Serialization order of parameter tensors in checkpoints; also the draw
# order at initialization.
PARAM_FIELDS = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "fc1_w", "fc1_b",
    "fc2_w", "fc2_b",
    "out_w", "out_b",
)


@dataclass(frozen=True)
class CnnConfig:
    """Structural knobs. n_frames is the input channel count; subsample
    shrinks the 24x32 sensor frame to floor(24/n)xfloor(32/n) by block
    averaging before the network sees it."""

    n_frames: int = 3
    subsample: int = 1
    conv1_filters: int = 6
    conv2_filters: int = 16
    fc1: int = 120
    fc2: int = 80
    kernel: int = 5

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.subsample not in (1, 2, 3):
            raise ValueError("subsample must be one of {1, 2, 3}")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        for name in ("conv1_filters", "conv2_filters", "fc1", "fc2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.flatten_size() == 0:
            raise ValueError("configuration yields an empty flatten layer")

    def input_hw(self) -> tuple[int, int]:
        return SENSOR_H // self.subsample, SENSOR_W // self.subsample

    def pooled_hw(self) -> tuple[int, int]:
        h, w = self.input_hw()
        return -(-h // 2), -(-w // 2)

    def flatten_size(self) -> int:
        ph, pw = self.pooled_hw()
        return self.conv2_filters * ph * pw

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k = self.kernel
        return {
            "conv1_w": (self.conv1_filters, self.n_frames, k, k),
            "conv1_b": (self.conv1_filters,),
            "conv2_w": (self.conv2_filters, self.conv1_filters, k, k),
            "conv2_b": (self.conv2_filters,),
            "fc1_w": (self.fc1, self.flatten_size()),
            "fc1_b": (self.fc1,),
            "fc2_w": (self.fc2, self.fc1),
            "fc2_b": (self.fc2,),
            "out_w": (1, self.fc2),
            "out_b": (1,),
        }


@dataclass(frozen=True)
class ModelParams:
    """All trainable tensors. Also reused as the container for gradients and
    Adam moment estimates, which mirror the parameter shapes."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in PARAM_FIELDS]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(**{n: t.astype(dtype) for n, t in self.tensors()})

    def map(self, fn) -> "ModelParams":
        return ModelParams(**{n: fn(t) for n, t in self.tensors()})

    def zip_map(self, fn, *others: "ModelParams") -> "ModelParams":
        return ModelParams(
            **{
                n: fn(t, *(getattr(o, n) for o in others))
                for n, t in self.tensors()
            }
        )

    def count(self) -> int:
        return sum(t.size for _, t in self.tensors())


def param_count(cfg: CnnConfig) -> int:
    """Exact number of trainable parameters for a configuration."""
    return sum(int(np.prod(s)) for s in cfg.param_shapes().values())


def build_model(cfg: CnnConfig, rng: Rng, dtype=np.float32) -> ModelParams:
    """He-uniform fan-in initialization of all weights; biases start at zero.

    Weights are drawn in PARAM_FIELDS order from the given stream, so a seed
    fully determines the parameters.
    """
    shapes = cfg.param_shapes()
    tensors = {}
    for name in PARAM_FIELDS:
        shape = shapes[name]
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        draw = rng.uniform(-limit, limit, int(np.prod(shape)))
        tensors[name] = draw.astype(dtype).reshape(shape)
    return ModelParams(**tensors)


@dataclass
class ForwardCache:
    """Activations of one forward pass, kept for backward.

    ReLU layers rectify in place, so post-activation tensors stand in for the
    pre-activations (the backward masks x > 0 agree). When a workspace is
    used, the cache references its buffers and stays valid only until the
    next forward call with the same workspace.
    """

    x: np.ndarray            # (B, C, H, W) input batch
    x_padded: np.ndarray     # same-padded input
    conv1_act: np.ndarray    # (B, F1, H, W), rectified conv1 output
    pool_arg: np.ndarray     # argmax map of the pool
    pool_out: np.ndarray     # (B, F1, ceil(H/2), ceil(W/2))
    pool_padded: np.ndarray  # same-padded pool output
    flat: np.ndarray         # (B, flatten) view of the rectified conv2 output
    fc1_act: np.ndarray
    fc2_act: np.ndarray


class Workspace:
    """Reusable buffers for forward/backward during training.

    Avoids reallocating the (identically shaped) activation and gradient
    arrays on every mini-batch; purely an optimization, results are
    unchanged.
    """

    def __init__(self):
        self._bufs: dict[str, np.ndarray] = {}

    def get(self, key: str, shape: tuple[int, ...], dtype, zeroed: bool = False):
        buf = self._bufs.get(key)
        if buf is None or buf.shape != shape or buf.dtype != np.dtype(dtype):
            buf = np.zeros(shape, dtype) if zeroed else np.empty(shape, dtype)
            self._bufs[key] = buf
        return buf


def forward(
    params: ModelParams, batch: np.ndarray, workspace: Workspace | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Predict one scalar speed per batch element.

    batch: (B, n_frames, H, W). Returns (predictions of shape (B,), cache).
    """
    if batch.ndim != 4:
        raise ops.ShapeError(f"batch must be 4D (B, C, H, W), got {batch.ndim}D")
    if batch.shape[1] != params.conv1_w.shape[1]:
        raise ops.ShapeError(
            f"batch has {batch.shape[1]} channels, model expects {params.conv1_w.shape[1]}"
        )
    ops.ensure_finite("input batch", batch)
    ws = workspace
    b, _, h, w = batch.shape
    dt = batch.dtype

    def buf(key, shape, zeroed=False, dtype=dt):
        return None if ws is None else ws.get(key, shape, dtype, zeroed)

    f1, f2 = params.conv1_w.shape[0], params.conv2_w.shape[0]
    ph, pw = -(-h // 2), -(-w // 2)

    x_padded = ops.pad_same(batch, out=buf("x_pad", (b, batch.shape[1], h + 4, w + 4), True))
    z1 = ops.conv2d_forward(batch, params.conv1_w, params.conv1_b,
                            x_padded=x_padded, out=buf("conv1", (b, f1, h, w)))
    a1 = ops.relu_forward(z1, out=z1)
    p1, arg = ops.maxpool2_forward(a1, out=buf("pool", (b, f1, ph, pw)),
                                   arg_out=buf("arg", (b, f1, ph, pw), dtype=np.int8))
    pool_padded = ops.pad_same(p1, out=buf("pool_pad", (b, f1, ph + 4, pw + 4), True))
    z2 = ops.conv2d_forward(p1, params.conv2_w, params.conv2_b,
                            x_padded=pool_padded, out=buf("conv2", (b, f2, ph, pw)))
    a2 = ops.relu_forward(z2, out=z2)
    flat = a2.reshape(b, -1)
    if flat.shape[1] != params.fc1_w.shape[1]:
        raise ops.ShapeError(
            f"flatten size {flat.shape[1]} does not match fc1 width {params.fc1_w.shape[1]}"
        )
    z3 = ops.dense_forward(flat, params.fc1_w, params.fc1_b,
                           out=buf("fc1", (b, params.fc1_w.shape[0])))
    a3 = ops.relu_forward(z3, out=z3)
    z4 = ops.dense_forward(a3, params.fc2_w, params.fc2_b,
                           out=buf("fc2", (b, params.fc2_w.shape[0])))
    a4 = ops.relu_forward(z4, out=z4)
    preds = ops.dense_forward(a4, params.out_w, params.out_b)[:, 0]

    cache = ForwardCache(
        x=batch, x_padded=x_padded, conv1_act=a1, pool_arg=arg, pool_out=p1,
        pool_padded=pool_padded, flat=flat, fc1_act=a3, fc2_act=a4,
    )
    return preds, cache


def backward(
    params: ModelParams,
    cache: ForwardCache,
    d_preds: np.ndarray,
    workspace: Workspace | None = None,
) -> ModelParams:
    """Exact reverse-mode gradients of `forward` for upstream d_preds (B,).

    The result has ModelParams shape. Whatever reduction the loss applied
    (e.g. 1/B for a batch mean) arrives through d_preds; gradients here are
    plain sums over the batch.
    """
    b = cache.x.shape[0]
    if d_preds.shape != (b,):
        raise ops.ShapeError(
            f"d_preds must be ({b},) to match the cached batch, got {d_preds.shape}"
        )
    ws = workspace
    dt = cache.fc2_act.dtype

    def buf(key, shape, zeroed=False, dtype=dt):
        return None if ws is None else ws.get(key, shape, dtype, zeroed)

    d_out = d_preds[:, None].astype(dt)
    d_a4, d_out_w, d_out_b = ops.dense_backward(cache.fc2_act, params.out_w, d_out)
    d_z4 = ops.relu_backward(cache.fc2_act, d_a4)
    d_a3, d_fc2_w, d_fc2_b = ops.dense_backward(cache.fc1_act, params.fc2_w, d_z4)
    d_z3 = ops.relu_backward(cache.fc1_act, d_a3)
    d_flat, d_fc1_w, d_fc1_b = ops.dense_backward(
        cache.flat, params.fc1_w, d_z3,
        dx_out=buf("d_flat", cache.flat.shape),
        dw_out=buf("d_fc1_w", params.fc1_w.shape),
    )
    a2 = cache.flat.reshape(cache.pool_out.shape[0], params.conv2_w.shape[0],
                            cache.pool_out.shape[2], cache.pool_out.shape[3])
    d_z2 = ops.relu_backward(a2, d_flat.reshape(a2.shape))
    d_p1, d_conv2_w, d_conv2_b = ops.conv2d_backward(
        cache.pool_out, params.conv2_w, d_z2, x_padded=cache.pool_padded,
        dx_out=buf("d_pool", cache.pool_out.shape),
    )
    d_a1 = ops.maxpool2_backward(cache.pool_arg, cache.conv1_act.shape, d_p1,
                                 out=buf("d_conv1", cache.conv1_act.shape))
    d_z1 = ops.relu_backward(cache.conv1_act, d_a1)
    _, d_conv1_w, d_conv1_b = ops.conv2d_backward(
        cache.x, params.conv1_w, d_z1, x_padded=cache.x_padded, need_dx=False
    )

    return ModelParams(
        conv1_w=d_conv1_w, conv1_b=d_conv1_b,
        conv2_w=d_conv2_w, conv2_b=d_conv2_b,
        fc1_w=d_fc1_w, fc1_b=d_fc1_b,
        fc2_w=d_fc2_w, fc2_b=d_fc2_b,
        out_w=d_out_w, out_b=d_out_b,
    )


class CheckpointError(ValueError):
    """Malformed or inconsistent checkpoint bytes."""


_CFG_FIELDS = ("n_frames", "subsample", "conv1_filters", "conv2_filters", "fc1", "fc2", "kernel")


def checkpoint_bytes(cfg: CnnConfig, params: ModelParams) -> bytes:
    """Serialize: magic 'THOD', u32 LE version, seven u32 LE config integers
    (n_frames, subsample, conv1_filters, conv2_filters, fc1, fc2, kernel),
    then each parameter tensor in PARAM_FIELDS order as LE float32."""
    shapes = cfg.param_shapes()
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    out.append(struct.pack("<7I", *(getattr(cfg, f) for f in _CFG_FIELDS)))
    for name, tensor in params.tensors():
        if tensor.shape != shapes[name]:
            raise CheckpointError(
                f"{name} has shape {tensor.shape}, config expects {shapes[name]}"
            )
        out.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(path, cfg: CnnConfig, params: ModelParams) -> None:
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, checkpoint_bytes(cfg, params))


def load_checkpoint(path) -> tuple[CnnConfig, ModelParams]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes, not a model checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    vals = struct.unpack_from("<7I", blob, 8)
    try:
        cfg = CnnConfig(**dict(zip(_CFG_FIELDS, vals)))
    except ValueError as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from exc
    offset = 8 + 28
    shapes = cfg.param_shapes()
    expected = offset + 4 * param_count(cfg)
    if len(blob) != expected:
        raise CheckpointError(
            f"checkpoint has {len(blob)} bytes, expected {expected} for this config"
        )
    tensors = {}
    for name in PARAM_FIELDS:
        shape = shapes[name]
        n = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        tensors[name] = arr.astype(np.float32).reshape(shape)
    params = ModelParams(**tensors)
    for name, tensor in params.tensors():
        ops.ensure_finite(f"checkpoint tensor {name}", tensor)
    return cfg, params


def replace_params(params: ModelParams, **updates: np.ndarray) -> ModelParams:
    return dataclasses.replace(params, **updates)
