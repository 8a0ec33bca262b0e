"""CIFAR-10 binary ingestion and seeded synthetic image sets."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import IngestionError

CIFAR_RECORD = 3073
CIFAR_PER_FILE = 10_000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)
CIFAR_DIRNAME = "cifar-10-batches-bin"
DATA_ENV = "RELPATCH_DATA"


class ImageRecord(NamedTuple):
    pixels: np.ndarray  # C x H x W in [0, 1]
    label: int


@dataclass
class ImageSet:
    """A list of labeled images held as one ``(n, C, H, W)`` float32 array."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError("images must be (n, C, H, W) with one label each")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> ImageRecord:
        return ImageRecord(self.images[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[ImageRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> ImageSet:
        return ImageSet(self.images[:n], self.labels[:n], self.num_classes)

    def take(self, idx) -> ImageSet:
        return ImageSet(self.images[idx], self.labels[idx], self.num_classes)


def default_data_root() -> Path | None:
    root = os.environ.get(DATA_ENV)
    return Path(root) if root else None


def _cifar_dir(root) -> Path:
    root = Path(root)
    if (root / CIFAR_DIRNAME).is_dir():
        return root / CIFAR_DIRNAME
    return root


def read_cifar_file(path, expected_records: int | None = CIFAR_PER_FILE) -> tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch: each record is a label byte then 1024 R, 1024 G, 1024 B bytes."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e
    whole = len(raw) // CIFAR_RECORD
    if len(raw) % CIFAR_RECORD:
        raise IngestionError(f"{path}: truncated record at byte offset {whole * CIFAR_RECORD}")
    if expected_records is not None and whole != expected_records:
        raise IngestionError(
            f"{path}: {whole} records, expected {expected_records} (data ends at byte offset {len(raw)})"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(whole, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IngestionError(f"{path}: invalid label {labels[bad[0]]} at byte offset {bad[0] * CIFAR_RECORD}")
    pixels = rec[:, 1:].reshape(whole, 3, 32, 32)
    return pixels, labels


def load_cifar10(directory=None) -> tuple[ImageSet, ImageSet]:
    """Load the 50,000 / 10,000 train/test split from the standard binary batches."""
    if directory is None:
        directory = default_data_root()
        if directory is None:
            raise IngestionError(f"no dataset directory given and ${DATA_ENV} is unset")
    d = _cifar_dir(directory)

    def load(names):
        parts = [read_cifar_file(d / n) for n in names]
        pix = np.concatenate([p for p, _ in parts])
        lab = np.concatenate([l for _, l in parts])
        return ImageSet(pix.astype(np.float32) / np.float32(255.0), lab, 10)

    return load(CIFAR_TRAIN_FILES), load(CIFAR_TEST_FILES)


def to_cifar_bytes(images: ImageSet) -> bytes:
    """Serialize back to the binary record layout (pixels rounded to bytes)."""
    n = len(images)
    pix = np.rint(images.images.reshape(n, -1) * 255.0).clip(0, 255).astype(np.uint8)
    return np.concatenate([images.labels.astype(np.uint8)[:, None], pix], axis=1).tobytes()


# -- synthetic -------------------------------------------------------------

GENERATORS = ("gradient-fields", "colored-shapes", "noise")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    count: int = 256
    resolution: int = 32
    num_classes: int = 2
    generator: str = "colored-shapes"
    channels: int = 3

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.num_classes < 1 or self.resolution < 1:
            raise ValueError("num_classes and resolution must be >= 1")


def _coords(res: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(res) + 0.5) / res
    return np.meshgrid(c, c, indexing="xy")  # xx grows rightward, yy downward


def _gradient_field(rng, label, spec, xx, yy):
    # class sets the ramp's vertical tilt, from rising upward to rising downward;
    # the horizontal component gets a random sign so a left-right flip keeps the class
    k = spec.num_classes
    step = np.pi / max(k - 1, 1)
    theta = -np.pi / 2 + step * label + rng.uniform(-0.3, 0.3) * min(step, np.pi / 2)
    if rng.random() < 0.5:
        theta = np.pi - theta
    t = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta)
    t = (t - t.min()) / max(np.ptp(t), 1e-9)
    lo, hi = rng.uniform(0.0, 0.4, spec.channels), rng.uniform(0.6, 1.0, spec.channels)
    img = lo[:, None, None] + (hi - lo)[:, None, None] * t[None]
    f = rng.uniform(2, 5, size=2)
    img += 0.08 * np.sin(2 * np.pi * (f[0] * xx + f[1] * yy) + rng.uniform(0, 2 * np.pi))[None]
    return img


def _shape_mask(kind: int, xx, yy, cx, cy, r):
    dx, dy = xx - cx, yy - cy
    kind %= 8
    if kind == 0:
        return dx**2 + dy**2 <= r**2
    if kind == 1:
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if kind == 2:
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    if kind == 3:
        return ((np.abs(dx) <= r / 3) & (np.abs(dy) <= r)) | ((np.abs(dy) <= r / 3) & (np.abs(dx) <= r))
    if kind == 4:
        d = np.sqrt(dx**2 + dy**2)
        return (d <= r) & (d >= r / 2)
    if kind == 5:
        return (np.abs(dx) <= r) & (np.abs(dy) <= r / 3)
    if kind == 6:
        return (np.abs(dx) <= r / 3) & (np.abs(dy) <= r)
    return np.abs(dx) + np.abs(dy) <= r


def _colored_shape(rng, label, spec, xx, yy):
    # vertical background ramp gives patches a sense of up/down
    sky, ground = rng.uniform(0.5, 1.0, spec.channels), rng.uniform(0.0, 0.4, spec.channels)
    img = sky[:, None, None] * (1 - yy)[None] + ground[:, None, None] * yy[None]
    img += rng.normal(0, 0.03, img.shape)
    r = rng.uniform(0.18, 0.3)
    cx, cy = rng.uniform(r, 1 - r, size=2)
    mask = _shape_mask(label, xx, yy, cx, cy, r)
    color = rng.uniform(0, 1, spec.channels)
    img[:, mask] = color[:, None]
    return img


def make_synthetic(spec: SyntheticSpec) -> ImageSet:
    """Seeded, reproducible labeled images.

    ``gradient-fields``: the class is the vertical tilt of a smooth color ramp.
    ``colored-shapes``: the class is the shape drawn over a vertical ramp.
    ``noise``: i.i.d. uniform pixels with balanced random labels.
    """
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.count) % spec.num_classes).astype(np.int64)
    shape = (spec.count, spec.channels, spec.resolution, spec.resolution)
    if spec.generator == "noise":
        return ImageSet(rng.random(shape, dtype=np.float32), labels, spec.num_classes)
    xx, yy = _coords(spec.resolution)
    draw = _gradient_field if spec.generator == "gradient-fields" else _colored_shape
    images = np.empty(shape, dtype=np.float32)
    for i, lab in enumerate(labels):
        images[i] = np.clip(draw(rng, int(lab), spec, xx, yy), 0.0, 1.0)
    return ImageSet(images, labels, spec.num_classes)
