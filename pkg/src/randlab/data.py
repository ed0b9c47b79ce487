"""Datasets: synthetic Gaussian blobs, IDX ingestion, random labels, batching.

Random labels are drawn once per run from their own stream and stored on the
dataset; they must stay fixed across epochs for memorization to be a
well-defined target.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .errors import ConfigError, IdxFormatError


@dataclass
class Dataset:
    """Immutable-by-convention sample store; test splits carry no rnd labels."""

    inputs: np.ndarray  # float64, (m, features) or (m, c, h, w)
    labels: np.ndarray  # int64 class labels in [0, n_classes)
    n_classes: int
    rnd_labels: np.ndarray | None = None  # int64 in [0, n_rnd), train only
    split: str = "train"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ConfigError(f"{len(self.inputs)} inputs vs {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError(f"class label out of range [0, {self.n_classes})")
        if self.rnd_labels is not None:
            self.rnd_labels = np.asarray(self.rnd_labels, dtype=np.int64)
            if len(self.rnd_labels) != len(self.inputs):
                raise ConfigError("random labels must cover every sample")

    def __len__(self) -> int:
        return len(self.inputs)

    def with_rnd_labels(self, s: np.ndarray) -> "Dataset":
        return replace(self, rnd_labels=s)


def assign_rnd_labels(count: int, n_rnd: int, stream: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform labels over {0..n_rnd-1}, deterministic per stream state."""
    if n_rnd < 2:
        raise ConfigError(f"need at least 2 random label values, got {n_rnd}")
    return stream.integers(0, n_rnd, size=count, dtype=np.int64)


@dataclass(frozen=True)
class BlobSpec:
    """Gaussian clusters, one mean per class, scaled to a minimum spacing."""

    n_classes: int
    train_per_class: int
    test_per_class: int
    shape: int | tuple[int, int, int]  # flat feature count or (c, h, w)
    std: float
    spacing: float = 1.0
    seed: int = 0

    def dim(self) -> int:
        return self.shape if isinstance(self.shape, int) else int(np.prod(self.shape))


def _blob_means(spec: BlobSpec, rng: np.random.Generator) -> np.ndarray:
    means = rng.normal(size=(spec.n_classes, spec.dim()))
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(spec.n_classes) for j in range(i + 1, spec.n_classes)]
    closest = min(dists) if dists else 1.0
    return means * (spec.spacing / closest)


def _draw_split(spec: BlobSpec, means: np.ndarray, per_class: int, rng: np.random.Generator, split: str) -> Dataset:
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    noise = rng.normal(size=(len(labels), spec.dim()))
    inputs = means[labels] + spec.std * noise
    if not isinstance(spec.shape, int):
        inputs = inputs.reshape(len(labels), *spec.shape)
    return Dataset(inputs, labels, spec.n_classes, split=split)


def gen_blobs(spec: BlobSpec) -> tuple[Dataset, Dataset]:
    """Disjoint train and test draws from the same class clusters."""
    if spec.std < 0:
        raise ConfigError(f"cluster std must be >= 0, got {spec.std}")
    if spec.n_classes < 2:
        raise ConfigError("need at least 2 classes")
    rng = np.random.default_rng(np.random.SeedSequence((int(spec.seed), 0x626C6F62)))
    means = _blob_means(spec, rng)
    train = _draw_split(spec, means, spec.train_per_class, rng, "train")
    test = _draw_split(spec, means, spec.test_per_class, rng, "test")
    return train, test


# ---------------------------------------------------------------------------
# IDX file format (big-endian; magic 0x00 0x00 <dtype> <ndims>)

_IDX_UBYTE = 0x08


def read_idx(path) -> np.ndarray:
    """Parse one IDX file; images come back scaled to [0, 1], labels as ints."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX magic number", len(raw))
    zero0, zero1, dtype, ndims = raw[0], raw[1], raw[2], raw[3]
    if zero0 != 0 or zero1 != 0:
        raise IdxFormatError(f"bad magic prefix {raw[:2].hex()}", 0)
    if dtype != _IDX_UBYTE:
        raise IdxFormatError(f"unsupported type code 0x{dtype:02x} (only unsigned byte)", 2)
    if not 1 <= ndims <= 4:
        raise IdxFormatError(f"unsupported dimension count {ndims}", 3)
    header_end = 4 + 4 * ndims
    if len(raw) < header_end:
        raise IdxFormatError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndims}I", raw[4:header_end])
    expected = int(np.prod(dims))
    if len(raw) - header_end != expected:
        raise IdxFormatError(
            f"payload holds {len(raw) - header_end} bytes, dimensions {dims} need {expected}",
            min(len(raw), header_end + expected),
        )
    values = np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)
    if ndims == 1:
        return values.astype(np.int64)
    return values.astype(np.float64) / 255.0


def write_idx(path, values: np.ndarray) -> None:
    """Write unsigned-byte data in IDX layout (inverse of :func:`read_idx`)."""
    arr = np.asarray(values)
    if arr.dtype != np.uint8:
        raise ConfigError(f"IDX writer takes uint8 data, got {arr.dtype}")
    if not 1 <= arr.ndim <= 4:
        raise ConfigError(f"IDX supports 1..4 dimensions, got {arr.ndim}")
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, _IDX_UBYTE, arr.ndim]))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx_dataset(images_path, labels_path, n_classes: int, split: str = "train") -> Dataset:
    """Pair an IDX image file with an IDX label file into a Dataset.

    2-d image payloads get a channel axis so they feed conv stacks directly.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise ConfigError(f"label file has {labels.ndim} dimensions, expected 1")
    if images.ndim == 1:
        raise ConfigError("image file is one-dimensional; is it a label file?")
    if len(images) != len(labels):
        raise ConfigError(f"{len(images)} images vs {len(labels)} labels")
    if labels.size and labels.max() >= n_classes:
        raise ConfigError(f"label {labels.max()} out of range for {n_classes} classes")
    if images.ndim == 3:
        images = images[:, None, :, :]
    return Dataset(images, labels, n_classes, split=split)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    rnd_labels: np.ndarray | None
    indices: np.ndarray


def batches(ds: Dataset, batch_size: int, stream: np.random.Generator | None = None) -> Iterator[Batch]:
    """One epoch of batches; shuffled when a stream is given, last partial kept."""
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = stream.permutation(len(ds)) if stream is not None else np.arange(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(
            ds.inputs[idx],
            ds.labels[idx],
            None if ds.rnd_labels is None else ds.rnd_labels[idx],
            idx,
        )
