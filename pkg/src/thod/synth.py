"""Synthetic rotating-camera acquisitions.

A seeded 360-degree panoramic thermal texture (smoothed random field plus
warm blobs; the clutter knob mirrors how busy the environment is) is sampled
by a virtual 24x32 camera with a configurable azimuth field of view. Between
frames the azimuth advances speed/fps degrees with wraparound, and Gaussian
sensor noise is added per frame. Everything is driven by the portable Rng,
so a (scene_seed, schedule, noise) triple reproduces frames bit for bit.
"""

from __future__ import annotations

import numpy as np

from .data import Acquisition, SPEED_MAX_DEGPS
from .model import SENSOR_H, SENSOR_W
from .rng import Rng, derive_seed

DEFAULT_FOV_DEG = 110.0
DEFAULT_FPS = 8.0
_PANO_COLS = 1024  # texture azimuth resolution, ~0.35 deg per texel

# Reduced-scale mirror of the real dataset's structure: 18 acquisitions in
# four environments, six of them Garden. Clutter follows the difficulty
# ranking (low / medium / medium / high).
DEFAULT_LAYOUT = (
    ("Laboratory", 4, 0.15),
    ("DiningPlace", 4, 0.5),
    ("Kitchen", 4, 0.5),
    ("Garden", 6, 0.85),
)


def _blur_axis(field: np.ndarray, radius: int, axis: int, wrap: bool) -> np.ndarray:
    """Box blur along one axis; circular for the azimuth axis."""
    if radius < 1:
        return field
    width = 2 * radius + 1
    moved = np.moveaxis(field, axis, 0)
    if wrap:
        padded = np.concatenate([moved[-radius:], moved, moved[:radius]], axis=0)
    else:
        padded = np.concatenate(
            [moved[radius:0:-1], moved, moved[-2 : -radius - 2 : -1]], axis=0
        )
    csum = np.cumsum(padded, axis=0)
    out = np.empty_like(moved)
    out[0] = csum[width - 1]
    out[1:] = csum[width:] - csum[: moved.shape[0] - 1]
    return np.moveaxis(out / width, 0, axis)


def _smooth_noise(rng: Rng, shape: tuple[int, int], radius: int) -> np.ndarray:
    field = rng.normal(shape[0] * shape[1]).reshape(shape)
    for _ in range(3):  # three box passes approximate a Gaussian
        field = _blur_axis(field, radius, axis=1, wrap=True)
        field = _blur_axis(field, max(1, radius // 4), axis=0, wrap=False)
    field /= max(field.std(), 1e-9)
    return field


def make_panorama(scene_seed: int, clutter: float = 0.5) -> np.ndarray:
    """Panoramic temperature texture, shape (24, _PANO_COLS), degrees C.

    clutter in [0, 1] scales the number of warm blobs and the amount of
    fine-grained structure.
    """
    if not 0.0 <= clutter <= 1.0:
        raise ValueError("clutter must be in [0, 1]")
    rng = Rng(scene_seed)
    shape = (SENSOR_H, _PANO_COLS)
    ambient = rng.uniform(15.0, 25.0, 1)[0]
    broad = 2.0 * _smooth_noise(rng, shape, radius=60)
    fine = (0.5 + 1.5 * clutter) * _smooth_noise(rng, shape, radius=6)

    tex = ambient + broad + fine
    n_blobs = 3 + int(round(17 * clutter))
    rows = np.arange(SENSOR_H, dtype=np.float64)[:, None]
    cols = np.arange(_PANO_COLS, dtype=np.float64)[None, :]
    for _ in range(n_blobs):
        r0 = rng.uniform(0.0, SENSOR_H - 1.0, 1)[0]
        c0 = rng.uniform(0.0, _PANO_COLS, 1)[0]
        sig_r = rng.uniform(1.5, 4.0, 1)[0]
        sig_c = rng.uniform(8.0, 60.0, 1)[0]
        amp = rng.uniform(3.0, 15.0, 1)[0]
        dc = (cols - c0 + _PANO_COLS / 2) % _PANO_COLS - _PANO_COLS / 2
        tex = tex + amp * np.exp(-0.5 * (((rows - r0) / sig_r) ** 2 + (dc / sig_c) ** 2))
    return tex


def render_frame(pano: np.ndarray, azimuth_deg: float, fov_deg: float) -> np.ndarray:
    """Sample the 24x32 camera at the given azimuth (linear interpolation
    between texture columns, wrapping at 360 degrees)."""
    cols = pano.shape[1]
    px = azimuth_deg + (np.arange(SENSOR_W) + 0.5) * (fov_deg / SENSOR_W)
    u = (px / 360.0) * cols - 0.5
    i0 = np.floor(u).astype(np.int64)
    frac = u - i0
    left = pano[:, i0 % cols]
    right = pano[:, (i0 + 1) % cols]
    return left * (1.0 - frac) + right * frac


def synth_acquisition(
    scene_seed: int,
    speed_schedule: list[tuple[float, int]],
    noise_std: float = 0.0,
    fov_deg: float = DEFAULT_FOV_DEG,
    fps: float = DEFAULT_FPS,
    env: str = "Synthetic",
    acq_id: str | None = None,
    clutter: float = 0.5,
) -> Acquisition:
    """Render one acquisition from a (speed deg/s, n_frames) schedule.

    The azimuth advances speed/fps degrees per frame with wraparound; labels
    and segment boundaries come straight from the schedule.
    """
    if not speed_schedule:
        raise ValueError("speed schedule must not be empty")
    for speed, n_frames in speed_schedule:
        if abs(speed) > SPEED_MAX_DEGPS:
            raise ValueError(f"|speed| must be <= {SPEED_MAX_DEGPS:g} deg/s, got {speed}")
        if n_frames < 1:
            raise ValueError("each schedule entry needs n_frames >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")

    pano = make_panorama(scene_seed, clutter)
    motion_rng = Rng(derive_seed(scene_seed, "motion"))
    noise_rng = Rng(derive_seed(scene_seed, "noise"))
    azimuth = motion_rng.uniform(0.0, 360.0, 1)[0]

    total = sum(n for _, n in speed_schedule)
    frames = np.empty((total, SENSOR_H, SENSOR_W), dtype=np.float32)
    labels = np.empty(total, dtype=np.float32)
    t = 0
    for speed, n_frames in speed_schedule:
        step = speed / fps
        for _ in range(n_frames):
            frame = render_frame(pano, azimuth, fov_deg)
            if noise_std > 0:
                frame = frame + noise_rng.normal(frame.size, std=noise_std).reshape(frame.shape)
            frames[t] = frame.astype(np.float32)
            labels[t] = speed
            azimuth = (azimuth + step) % 360.0
            t += 1
    return Acquisition(
        env=env,
        id=acq_id or f"synth-{scene_seed:016x}",
        fps=fps,
        frames=frames,
        labels=labels,
    )


def default_schedule(rng: Rng, n_segments: int, frames_per_segment: int) -> list[tuple[float, int]]:
    """Speed setpoints sweeping 20..200 deg/s in both directions, magnitudes
    evenly spaced, signs alternating, order shuffled per acquisition."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    mags = np.linspace(20.0, SPEED_MAX_DEGPS, n_segments)
    speeds = [float(m) * (1 if i % 2 == 0 else -1) for i, m in enumerate(mags)]
    speeds = rng.shuffle(speeds)
    return [(s, frames_per_segment) for s in speeds]


def make_default_dataset(
    seed: int,
    frames_per_acq: int = 600,
    n_segments: int = 10,
    noise_std: float = 0.08,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> list[Acquisition]:
    """The reduced-scale synthetic mirror of the real dataset: 18
    acquisitions across four environments with 6 Garden ones, each holding
    roughly frames_per_acq frames split into n_segments constant-speed runs."""
    frames_per_segment = max(1, frames_per_acq // n_segments)
    acqs = []
    for env, count, clutter in DEFAULT_LAYOUT:
        for i in range(count):
            scene_seed = derive_seed(seed, env, i)
            sched_rng = Rng(derive_seed(seed, env, i, "schedule"))
            schedule = default_schedule(sched_rng, n_segments, frames_per_segment)
            acqs.append(
                synth_acquisition(
                    scene_seed=scene_seed,
                    speed_schedule=schedule,
                    noise_std=noise_std,
                    fov_deg=fov_deg,
                    env=env,
                    acq_id=f"{env.lower()}-{i:02d}",
                    clutter=clutter,
                )
            )
    return acqs
