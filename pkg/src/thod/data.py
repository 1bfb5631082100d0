"""Dataset handling: canonical on-disk format, CSV import, block-average
subsampling, frame windowing, normalization and the 6-fold split.

An acquisition is one recording session: ordered 24x32 thermal frames in
degrees C plus one signed rotation-speed label (deg/s) per frame. Runs of
constant label form segments; training windows never cross a segment
boundary. Labels are normalized by 1/200 to [-1, 1] and each window is
standardized to zero mean / unit variance over all of its pixels before it
reaches the network.

Canonical layout: a ``manifest.json`` listing acquisitions with fields
{env, id, fps, width, height, frame_count, frames_file, labels_file}, where
frames_file holds little-endian float32, frame-major then row-major, and
labels_file one little-endian float32 per frame.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes, atomic_write_text
from .model import SENSOR_H, SENSOR_W

SPEED_MAX_DEGPS = 200.0
GARDEN_ENV = "Garden"
GARDEN_FOLDS = 6
STANDARDIZE_EPS = 1e-6
MANIFEST_NAME = "manifest.json"

_MANIFEST_FIELDS = ("env", "id", "fps", "width", "height", "frame_count", "frames_file", "labels_file")


class DatasetError(ValueError):
    """Malformed dataset files or inconsistent acquisition data."""


@dataclass
class Acquisition:
    """One recording session: frames, per-frame labels, provenance."""

    env: str
    id: str
    fps: float
    frames: np.ndarray  # (n, 24, 32) float32, degrees C
    labels: np.ndarray  # (n,) float32, signed deg/s

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.float32)
        if self.frames.ndim != 3:
            raise DatasetError(f"frames must be (n, H, W), got {self.frames.shape}")
        if len(self.frames) != len(self.labels):
            raise DatasetError(
                f"{self.id}: {len(self.frames)} frames but {len(self.labels)} labels"
            )
        if self.frames.shape[1:] != (SENSOR_H, SENSOR_W):
            raise DatasetError(
                f"{self.id}: frames are {self.frames.shape[1:]}, expected {(SENSOR_H, SENSOR_W)}"
            )
        if len(self.labels) and float(np.abs(self.labels).max()) > SPEED_MAX_DEGPS:
            raise DatasetError(
                f"{self.id}: |label| exceeds {SPEED_MAX_DEGPS:g} deg/s"
            )
        if not np.isfinite(self.frames).all() or not np.isfinite(self.labels).all():
            raise DatasetError(f"{self.id}: non-finite frame or label values")

    def __len__(self) -> int:
        return len(self.frames)

    def segments(self) -> list[tuple[int, int]]:
        """Half-open [start, end) index ranges of constant commanded speed."""
        n = len(self.labels)
        if n == 0:
            return []
        changes = np.flatnonzero(np.diff(self.labels) != 0) + 1
        bounds = [0, *changes.tolist(), n]
        return list(zip(bounds[:-1], bounds[1:]))


@dataclass
class Sample:
    """One training example: stacked, subsampled, standardized frames plus a
    normalized speed label and its provenance."""

    x: np.ndarray        # (n_frames, H, W) float32
    y_norm: float        # label / 200, in [-1, 1]
    acq_id: str
    start: int           # index of the oldest frame in the acquisition


@dataclass
class SampleSet:
    """Samples stacked for batched training."""

    x: np.ndarray                      # (n, n_frames, H, W) float32
    y: np.ndarray                      # (n,) float32
    provenance: list[tuple[str, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_samples(cls, samples: list[Sample]) -> "SampleSet":
        if not samples:
            raise DatasetError("cannot build a sample set from zero samples")
        x = np.stack([s.x for s in samples]).astype(np.float32)
        y = np.array([s.y_norm for s in samples], dtype=np.float32)
        return cls(x=x, y=y, provenance=[(s.acq_id, s.start) for s in samples])


@dataclass(frozen=True)
class FoldSplit:
    """Fold k tests on the k-th Garden acquisition, trains on everything else."""

    fold: int
    test: Acquisition
    train: list[Acquisition]


def subsample(frame: np.ndarray, n_r: int) -> np.ndarray:
    """Reduce resolution by averaging non-overlapping n_r x n_r blocks.

    Trailing rows/columns that do not fill a block are dropped, so a 24x32
    frame maps to 24x32 (n_r=1), 12x16 (n_r=2) or 8x10 (n_r=3).
    """
    if n_r not in (1, 2, 3):
        raise DatasetError(f"subsample factor must be in {{1, 2, 3}}, got {n_r}")
    if n_r == 1:
        return frame
    frames, single = (frame[None], True) if frame.ndim == 2 else (frame, False)
    n, h, w = frames.shape
    ho, wo = h // n_r, w // n_r
    blocks = frames[:, : ho * n_r, : wo * n_r].reshape(n, ho, n_r, wo, n_r)
    out = blocks.mean(axis=(2, 4), dtype=np.float64).astype(frames.dtype)
    return out[0] if single else out


def make_windows(acq: Acquisition, n_f: int, n_r: int) -> list[Sample]:
    """Sliding stride-1 windows of n_f consecutive frames, each confined to
    one constant-speed segment. Frames are subsampled first; then the whole
    window is standardized over all its pixels. Segments shorter than n_f
    contribute nothing."""
    if n_f < 1:
        raise DatasetError("n_f must be >= 1")
    if len(acq) == 0:
        return []
    small = subsample(acq.frames, n_r)
    samples: list[Sample] = []
    for seg_start, seg_end in acq.segments():
        if seg_end - seg_start < n_f:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(
            small[seg_start:seg_end], n_f, axis=0
        )  # (n_win, H, W, n_f)
        windows = windows.transpose(0, 3, 1, 2).astype(np.float64)
        mean = windows.mean(axis=(1, 2, 3), keepdims=True)
        var = windows.var(axis=(1, 2, 3), keepdims=True)
        norm = ((windows - mean) / np.sqrt(var + STANDARDIZE_EPS)).astype(np.float32)
        y = float(acq.labels[seg_start]) / SPEED_MAX_DEGPS
        for i in range(norm.shape[0]):
            samples.append(
                Sample(x=norm[i], y_norm=y, acq_id=acq.id, start=seg_start + i)
            )
    return samples


def build_sample_set(acqs: list[Acquisition], n_f: int, n_r: int) -> SampleSet:
    """Windows of every acquisition, concatenated in acquisition order."""
    samples: list[Sample] = []
    for acq in acqs:
        samples.extend(make_windows(acq, n_f, n_r))
    return SampleSet.from_samples(samples)


def split_folds(acqs: list[Acquisition]) -> list[FoldSplit]:
    """The 6-fold protocol: each Garden acquisition is held out once as the
    test set while all remaining acquisitions (including the other Garden
    ones) form the training set. Garden order follows acquisition id."""
    garden = sorted((a for a in acqs if a.env == GARDEN_ENV), key=lambda a: a.id)
    if len(garden) != GARDEN_FOLDS:
        raise DatasetError(
            f"expected exactly {GARDEN_FOLDS} Garden acquisitions, found {len(garden)}"
        )
    folds = []
    for k, test in enumerate(garden):
        train = [a for a in acqs if a is not test]
        folds.append(FoldSplit(fold=k, test=test, train=train))
    return folds


def import_csv(file, env: str, fps: float, acq_id: str | None = None) -> Acquisition:
    """Read an acquisition from CSV: each row is 768 pixel values (row-major
    24x32, degrees C) followed by one signed speed label in deg/s."""
    path = Path(file)
    n_pixels = SENSOR_H * SENSOR_W
    frames, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != n_pixels + 1:
                raise DatasetError(
                    f"{path.name}:{lineno}: bad column count {len(row)}, expected {n_pixels + 1}"
                )
            try:
                values = np.array(row, dtype=np.float64)
            except ValueError as exc:
                raise DatasetError(f"{path.name}:{lineno}: non-numeric cell") from exc
            frames.append(values[:n_pixels].astype(np.float32).reshape(SENSOR_H, SENSOR_W))
            labels.append(values[n_pixels])
    if not frames:
        return Acquisition(env=env, id=acq_id or path.stem, fps=fps,
                           frames=np.zeros((0, SENSOR_H, SENSOR_W), np.float32),
                           labels=np.zeros(0, np.float32))
    return Acquisition(
        env=env, id=acq_id or path.stem, fps=fps,
        frames=np.stack(frames), labels=np.array(labels, dtype=np.float32),
    )


def load_dataset(root) -> list[Acquisition]:
    """Load every acquisition listed in <root>/manifest.json."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"no {MANIFEST_NAME} in {root}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{manifest_path}: corrupt manifest: {exc}") from exc
    entries = manifest.get("acquisitions")
    if not isinstance(entries, list):
        raise DatasetError(f"{manifest_path}: missing 'acquisitions' list")
    acqs = []
    for entry in entries:
        missing = [f for f in _MANIFEST_FIELDS if f not in entry]
        if missing:
            raise DatasetError(f"{manifest_path}: entry missing fields {missing}")
        if (entry["width"], entry["height"]) != (SENSOR_W, SENSOR_H):
            raise DatasetError(
                f"{entry['id']}: unsupported frame size {entry['width']}x{entry['height']}"
            )
        n = int(entry["frame_count"])
        frames = _read_f32(root / entry["frames_file"], n * SENSOR_H * SENSOR_W, entry["id"])
        labels = _read_f32(root / entry["labels_file"], n, entry["id"])
        acqs.append(
            Acquisition(
                env=entry["env"], id=entry["id"], fps=float(entry["fps"]),
                frames=frames.reshape(n, SENSOR_H, SENSOR_W), labels=labels,
            )
        )
    return acqs


def _read_f32(path: Path, count: int, acq_id: str) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DatasetError(f"{acq_id}: missing file {path}") from None
    if len(raw) != 4 * count:
        raise DatasetError(
            f"{acq_id}: {path.name} holds {len(raw)} bytes, expected {4 * count}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def save_dataset(root, acqs: list[Acquisition]) -> None:
    """Write acquisitions plus manifest in the canonical layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for acq in acqs:
        frames_file = f"{acq.id}.frames.bin"
        labels_file = f"{acq.id}.labels.bin"
        atomic_write_bytes(root / frames_file, np.ascontiguousarray(acq.frames, "<f4").tobytes())
        atomic_write_bytes(root / labels_file, np.ascontiguousarray(acq.labels, "<f4").tobytes())
        entries.append(
            {
                "env": acq.env, "id": acq.id, "fps": acq.fps,
                "width": SENSOR_W, "height": SENSOR_H,
                "frame_count": len(acq), "frames_file": frames_file,
                "labels_file": labels_file,
            }
        )
    manifest = json.dumps({"acquisitions": entries}, indent=2, sort_keys=True)
    atomic_write_text(root / MANIFEST_NAME, manifest + "\n")


def add_to_dataset(root, acq: Acquisition) -> None:
    """Append one acquisition to an existing (or new) canonical dataset."""
    root = Path(root)
    existing = load_dataset(root) if (root / MANIFEST_NAME).exists() else []
    if any(a.id == acq.id for a in existing):
        raise DatasetError(f"dataset already contains an acquisition with id {acq.id!r}")
    save_dataset(root, existing + [acq])
