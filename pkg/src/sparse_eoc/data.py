"""Datasets: IDX (MNIST) files and synthetic Gaussian blobs."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import rng
from .errors import BadMagicError, CountMismatchError, DomainError, IdxFormatError, ShapeError, TruncatedFileError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ShapeError(f"{x.shape[0]} feature rows but labels have shape {y.shape}")
        if self.n_classes < 1:
            raise DomainError("n_classes must be positive")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DomainError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def subset(self, n: int, seed: int = 0) -> "Dataset":
        """Random ``n`` samples (all of them if ``n >= len``)."""
        if n >= len(self):
            return self
        idx = np.sort(rng.substream(seed, rng.DATA, 1).permutation(len(self))[:n])
        return self.take(idx)

    def split(self, holdout: float, seed: int = 0) -> Tuple["Dataset", "Dataset"]:
        """Random ``(train, held_out)`` split with a ``holdout`` fraction held out."""
        if not 0.0 <= holdout < 1.0:
            raise DomainError(f"holdout fraction must lie in [0, 1), got {holdout!r}")
        perm = rng.substream(seed, rng.DATA, 2).permutation(len(self))
        n_hold = int(round(holdout * len(self)))
        return self.take(np.sort(perm[n_hold:])), self.take(np.sort(perm[:n_hold]))


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: Optional[int] = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape.

    Raises
    ------
    BadMagicError
        Wrong magic number (or not an unsigned-byte IDX file).
    TruncatedFileError
        Header or payload shorter than declared.
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(path, 4, len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != _UBYTE:
        raise BadMagicError(f"{path}: magic 0x{magic:08x} is not an unsigned-byte IDX header")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(path, header, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims, dtype=np.int64))
    if len(raw) < expected:
        raise TruncatedFileError(path, expected, len(raw))
    if len(raw) > expected:
        raise IdxFormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: Optional[int] = None) -> Dataset:
    """Load an IDX image/label pair (plain or gzip), pixels scaled to [0, 1]."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected 1 dimension, got {labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if n_classes is None:
        n_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    return Dataset(features, labels.astype(np.int64), n_classes)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(directory, part: str = "train"):
    """Paths of an MNIST image/label pair in ``directory`` (plain or ``.gz``), or None."""
    if directory is None:
        return None
    found = []
    for name in MNIST_FILES[part]:
        for cand in (name, name + ".gz", name.replace("-idx", ".idx")):
            path = os.path.join(directory, cand)
            if os.path.isfile(path):
                found.append(path)
                break
        else:
            return None
    return tuple(found)


def synthetic_dataset(
    n_classes: int = 10,
    n_features: int = 784,
    n_samples: int = 10000,
    separation: float = 4.0,
    seed: int = 0,
) -> Dataset:
    """Rectified Gaussian blobs scaled into [0, 1].

    Class means sit on orthonormal axes scaled so that every pair of means is
    ``separation`` apart; each sample is its class mean plus standard
    Gaussian noise.  Negative coordinates are set to zero and everything is
    divided by the largest value, which gives non-negative, partly sparse
    inputs in the manner of pixel intensities.  Labels are balanced and
    shuffled.
    """
    if n_classes < 1 or n_features < 1 or n_samples < 1:
        raise DomainError("n_classes, n_features and n_samples must be positive")
    if separation < 0.0:
        raise DomainError("separation must be non-negative")
    if n_classes > n_features:
        raise DomainError("n_classes must not exceed n_features")
    g = rng.substream(seed, rng.DATA, 0)
    basis, _ = np.linalg.qr(g.standard_normal((n_features, n_classes)))
    means = basis.T * (separation / np.sqrt(2.0))
    labels = np.arange(n_samples) % n_classes
    labels = labels[g.permutation(n_samples)]
    x = np.maximum(means[labels] + g.standard_normal((n_samples, n_features)), 0.0)
    top = x.max()
    if top > 0.0:
        x /= top
    return Dataset(x, labels, n_classes)


def synthetic_split(
    n_train: int = 10000,
    n_test: int = 2000,
    n_classes: int = 10,
    n_features: int = 784,
    separation: float = 80.0,
    seed: int = 0,
) -> Tuple[Dataset, Dataset]:
    """Train and test sets drawn from the same blobs."""
    full = synthetic_dataset(n_classes, n_features, n_train + n_test, separation, seed)
    return full.take(np.arange(n_train)), full.take(np.arange(n_train, n_train + n_test))
