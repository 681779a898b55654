"""Dataset ingestion and class-incremental partitioning.

Covers the IDX binary format used by MNIST (bit-exact read/write), a
synthetic gaussian-blob generator for fast fixtures, and splitting a
dataset into an ordered sequence of class batches.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core_math import SeededRng
from .errors import DataFormatError, ParameterError, ScheduleError, ShapeError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class LabeledExample:
    """One training example with its label one-hot encoded at width K."""

    features: np.ndarray
    label: int
    one_hot: np.ndarray


@dataclass
class Dataset:
    """A fixed collection of examples sharing one feature dimension.

    ``n_classes`` is the one-hot width K for this dataset; it grows over
    the incremental schedule, so one-hot vectors are materialized on
    demand rather than stored.
    """

    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int64
    n_classes: int
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError("features must be (N, D)")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels must align with features")
        if self.features.size and not np.isfinite(self.features).all():
            raise ShapeError("features contain NaN or Inf")
        if len(self.labels) and self.labels.min() < 0:
            raise ShapeError("negative class label")
        if len(self.labels) and self.labels.max() >= self.n_classes:
            raise ShapeError(
                f"label {self.labels.max()} >= class count {self.n_classes}"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def one_hot(self) -> np.ndarray:
        """(N, K) one-hot encoding at this dataset's current class count."""
        out = np.zeros((len(self), self.n_classes))
        out[np.arange(len(self)), self.labels] = 1.0
        return out

    def example(self, n: int) -> LabeledExample:
        hot = np.zeros(self.n_classes)
        hot[self.labels[n]] = 1.0
        return LabeledExample(self.features[n], int(self.labels[n]), hot)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, self.split)

    def with_classes(self, n_classes: int) -> "Dataset":
        """Same examples, one-hot width re-pinned to ``n_classes``."""
        return Dataset(self.features, self.labels, n_classes, self.split)


@dataclass
class ClassBatchSchedule:
    """Ordered disjoint groups of class indices fed to the model in turn."""

    groups: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        flat = [c for g in self.groups for c in g]
        if len(set(flat)) != len(flat):
            raise ScheduleError("schedule groups overlap")
        if self.groups and len(self.groups[0]) < 2:
            raise ScheduleError("first group must hold at least 2 classes")

    @property
    def classes(self) -> list[int]:
        return [c for g in self.groups for c in g]

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)


def _read_exact(f, n: int, path) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise OSError(f"{path}: truncated file (wanted {n} bytes, got {len(buf)})")
    return buf


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load an IDX image/label file pair into a flat float64 dataset.

    Layout (all integers big-endian):
        images: u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels
        labels: u32 magic 0x00000801 | u32 count | u8 labels
    Pixel bytes are scaled to [0, 1] by division with 255.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(f"{images_path}: bad image magic 0x{magic:08x}")
        raw = _read_exact(f, count * rows * cols, images_path)
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)

    if count != label_count:
        raise DataFormatError(
            f"image count {count} != label count {label_count}"
        )
    features = pixels.astype(np.float64) / 255.0
    n_classes = int(labels.max()) + 1 if label_count else 0
    return Dataset(features, labels.astype(np.int64), n_classes, split)


def save_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a dataset back to an IDX pair, inverse of ``load_idx``.

    Features must lie on the byte grid k/255 for the round trip to be
    bit-exact, which holds for anything loaded by ``load_idx``.
    """
    if rows * cols != dataset.dim:
        raise ShapeError(f"rows*cols={rows * cols} != feature dim {dataset.dim}")
    scaled = dataset.features * 255.0
    bytes_ = np.rint(scaled)
    if np.abs(scaled - bytes_).max(initial=0.0) > 1e-9 or scaled.min(initial=0.0) < 0 or scaled.max(initial=0.0) > 255:
        raise ParameterError("features are not on the byte grid k/255")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(dataset), rows, cols))
        f.write(bytes_.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def synthetic_blobs(
    k_classes: int,
    dim: int,
    n_per_class: int,
    separation: float,
    rng: SeededRng,
    split: str = "train",
) -> Dataset:
    """Isotropic gaussian blobs, class c centered at separation * e_(c mod dim).

    A fast, fully deterministic stand-in for image data: unit-variance
    noise around axis-aligned centers, examples laid out class by class.
    """
    if k_classes < 2:
        raise ParameterError(f"need at least 2 classes, got {k_classes}")
    if separation < 0:
        raise ParameterError("separation must be non-negative")
    if dim < 1 or n_per_class < 1:
        raise ParameterError("dim and n_per_class must be positive")
    features = np.empty((k_classes * n_per_class, dim))
    labels = np.empty(k_classes * n_per_class, dtype=np.int64)
    for c in range(k_classes):
        center = np.zeros(dim)
        center[c % dim] = separation
        noise = rng.normal(n_per_class * dim).reshape(n_per_class, dim)
        features[c * n_per_class : (c + 1) * n_per_class] = center + noise
        labels[c * n_per_class : (c + 1) * n_per_class] = c
    return Dataset(features, labels, k_classes, split)


def split_by_schedule(dataset: Dataset, schedule) -> list[Dataset]:
    """Partition a dataset into one batch per schedule group, order preserved.

    Every class present in the dataset must appear in exactly one group.
    """
    if not isinstance(schedule, ClassBatchSchedule):
        schedule = ClassBatchSchedule([list(g) for g in schedule])
    scheduled = set(schedule.classes)
    present = set(int(c) for c in np.unique(dataset.labels))
    missing = present - scheduled
    if missing:
        raise ScheduleError(f"classes {sorted(missing)} not covered by the schedule")
    batches = []
    for group in schedule:
        mask = np.isin(dataset.labels, list(group)) if group else np.zeros(len(dataset), bool)
        batches.append(dataset.subset(np.flatnonzero(mask)))
    return batches
