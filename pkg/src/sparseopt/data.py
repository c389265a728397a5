"""Dataset loading and sampling.

Two on-disk formats are understood:

* IDX, the big-endian container MNIST and FashionMNIST ship in
  (magic 0x00000803 for 3-D image files, 0x00000801 for 1-D label files).
* A flat little-endian container ("SODATA1") for datasets converted from
  other sources: magic, u32 sample count, u32 rows, u32 cols, u32 class
  count, then raw pixel bytes and one label byte per sample.

Pixels are scaled by 1/255 into [0, 1] on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InsufficientDataError
from .rng import Rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
FLAT_MAGIC = b"SODATA1"


@dataclass
class Dataset:
    images: np.ndarray  # (N, rows*cols) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"image count {self.images.shape[0]} != label count {self.labels.shape[0]}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label id out of range for class_count")

    @property
    def size(self) -> int:
        return self.images.shape[0]


@dataclass
class FewShotTask:
    """Seeded K-shot support-set selection over a dataset."""

    shots: int
    class_count: int
    seed: int
    support_indices: np.ndarray  # (shots * class_count,), grouped by class


def _read_be_u32(f, field: str) -> int:
    buf = f.read(4)
    if len(buf) != 4:
        raise FormatError(f"truncated file while reading {field}")
    return struct.unpack(">I", buf)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Parse an IDX image/label file pair into a normalized dataset."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, "image magic")
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"image magic 0x{magic:08x} != 0x{IDX_IMAGE_MAGIC:08x}")
        count = _read_be_u32(f, "image count")
        rows = _read_be_u32(f, "row count")
        cols = _read_be_u32(f, "column count")
        payload = f.read(count * rows * cols)
        if len(payload) != count * rows * cols:
            raise FormatError(
                f"image payload has {len(payload)} bytes, expected {count * rows * cols}"
            )
        if f.read(1):
            raise FormatError("trailing bytes after image payload")
    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, "label magic")
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"label magic 0x{magic:08x} != 0x{IDX_LABEL_MAGIC:08x}")
        label_count = _read_be_u32(f, "label count")
        if label_count != count:
            raise FormatError(f"label count {label_count} != image count {count}")
        label_bytes = f.read(label_count)
        if len(label_bytes) != label_count:
            raise FormatError(f"label payload has {len(label_bytes)} bytes, expected {label_count}")
        if f.read(1):
            raise FormatError("trailing bytes after label payload")

    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(count, rows * cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    class_count = int(labels.max()) + 1 if labels.size else 0
    return Dataset(images, labels, class_count)


def save_idx(images_u8: np.ndarray, labels: np.ndarray, images_path: str, labels_path: str) -> None:
    """Write (N, rows, cols) uint8 images and labels as an IDX pair."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels)
    if images_u8.ndim != 3:
        raise ValueError(f"expected (N, rows, cols) images, got shape {images_u8.shape}")
    n, rows, cols = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.astype(np.uint8).tobytes())


def load_flat(path: str) -> Dataset:
    """Parse the SODATA1 flat container."""
    with open(path, "rb") as f:
        magic = f.read(len(FLAT_MAGIC))
        if magic != FLAT_MAGIC:
            raise FormatError(f"bad flat magic {magic!r}")
        head = f.read(16)
        if len(head) != 16:
            raise FormatError("truncated file while reading flat header")
        n, rows, cols, class_count = struct.unpack("<IIII", head)
        payload = f.read(n * rows * cols)
        if len(payload) != n * rows * cols:
            raise FormatError(f"pixel payload has {len(payload)} bytes, expected {n * rows * cols}")
        label_bytes = f.read(n)
        if len(label_bytes) != n:
            raise FormatError(f"label payload has {len(label_bytes)} bytes, expected {n}")
        if f.read(1):
            raise FormatError("trailing bytes after flat payload")
    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(images.reshape(n, rows * cols), labels, class_count)


def save_flat(images_u8: np.ndarray, labels: np.ndarray, class_count: int, path: str) -> None:
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    if images_u8.ndim != 3:
        raise ValueError(f"expected (N, rows, cols) images, got shape {images_u8.shape}")
    n, rows, cols = images_u8.shape
    with open(path, "wb") as f:
        f.write(FLAT_MAGIC)
        f.write(struct.pack("<IIII", n, rows, cols, class_count))
        f.write(images_u8.tobytes())
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def sample_few_shot(ds: Dataset, shots: int, seed: int) -> FewShotTask:
    """Pick `shots` examples per class, uniformly without replacement.

    Classes are visited in ascending order on a single PRNG stream, so the
    draws for class c do not depend on how many classes follow it.
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    rng = Rng(seed)
    chosen: list[np.ndarray] = []
    for c in range(ds.class_count):
        pool = np.nonzero(ds.labels == c)[0]
        if pool.size < shots:
            raise InsufficientDataError(
                f"class {c} has {pool.size} examples, need {shots}"
            )
        pool = pool.copy()
        for i in range(shots):
            j = i + rng.below(pool.size - i)
            pool[i], pool[j] = pool[j], pool[i]
        chosen.append(np.sort(pool[:shots]))
    return FewShotTask(shots, ds.class_count, seed, np.concatenate(chosen))


def subset(ds: Dataset, indices: np.ndarray) -> Dataset:
    return Dataset(ds.images[indices], ds.labels[indices], ds.class_count)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index batches of one epoch: a seeded permutation of range(n) cut into
    batches, the last one possibly partial. The permutation depends only on
    (seed, epoch)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = Rng(seed).spawn(0x45504F43, epoch)  # per-epoch child stream
    perm = np.array(rng.permutation(n), dtype=np.int64)
    return [perm[start:start + batch_size] for start in range(0, n, batch_size)]


def batch_stream(n: int, batch_size: int, seed: int):
    """Infinite iterator over epoch_batches with increasing epoch index."""
    epoch = 0
    while True:
        for batch in epoch_batches(n, batch_size, seed, epoch):
            yield batch
        epoch += 1
