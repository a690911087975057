"""Dataset loading: MNIST IDX files, CIFAR-10 binary batches, synthetic blobs."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .iht import flip_horizontal

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class DataFormatError(ValueError):
    pass


class WrongMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


@dataclass
class Dataset:
    images: np.ndarray   # (N, H, W), (N, C, H, W) or (N, d)
    labels: np.ndarray   # (N,) int
    split: str = "train"
    scale: float = 1.0   # raw values were divided by this

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} samples but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    @property
    def classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, count):
        return replace(self, images=self.images[:count], labels=self.labels[:count])


def _read(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def read_idx(path, expected_magic):
    """Parse one IDX file into a uint8 array with the declared dimensions."""
    raw = _read(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than its header")
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise WrongMagicError(f"{path}: wrong magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: file shorter than its header")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    need = int(np.prod(dims))
    body = raw[header:]
    if len(body) < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes, found {len(body)}")
    if len(body) > need:
        raise DataFormatError(f"{path}: {len(body) - need} trailing bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, split="train", limit=None):
    """Load an MNIST-style image/label pair; pixels scaled to [0, 1].

    Accepts plain or ``.gz`` files.
    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.ndim != 3:
        raise DataFormatError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: expected 1 dimension, got {labels.ndim}")
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), split, 255.0)


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        p = Path(directory) / name
        if p.exists():
            return p
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist(directory, train_limit=None, test_limit=None):
    """(train, test) from a directory holding the standard MNIST file names."""
    train = load_idx(
        _find(directory, "train-images-idx3-ubyte"),
        _find(directory, "train-labels-idx1-ubyte"),
        "train",
        train_limit,
    )
    test = load_idx(
        _find(directory, "t10k-images-idx3-ubyte"),
        _find(directory, "t10k-labels-idx1-ubyte"),
        "test",
        test_limit,
    )
    return train, test


def load_cifar10_batch(path, split="train"):
    """One CIFAR-10 binary batch: records of 1 label byte + 3072 CHW pixel bytes."""
    raw = _read(path)
    rec = 1 + 3 * 32 * 32
    if len(raw) % rec:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is not a whole number of records")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{path}: label {labels.max()} out of range")
    images = arr[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, split, 255.0)


def synth_blobs(classes, per_class, dim, separation=10.0, seed=0, split="train"):
    """Unit-variance Gaussian clusters whose closest centers are ``separation`` apart."""
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, dim))
    gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    closest = gaps[np.triu_indices(classes, 1)].min()
    centers *= separation / closest
    labels = np.repeat(np.arange(classes), per_class)
    points = centers[labels] + rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(points[order], labels[order], split)


def blob_split(classes, per_class, test_per_class, dim, separation=10.0, seed=0):
    """(train, test) drawn from one blob pool so both share cluster centers."""
    pool = synth_blobs(classes, per_class + test_per_class, dim, separation, seed)
    n = classes * per_class
    return (
        Dataset(pool.images[:n], pool.labels[:n], "train"),
        Dataset(pool.images[n:], pool.labels[n:], "test"),
    )


def augment_flip(dataset: Dataset, probability, seed=0):
    """Copy of ``dataset`` with each image mirrored left-right with ``probability``."""
    rng = np.random.default_rng(seed)
    return replace(dataset, images=flip_horizontal(dataset.images, probability, rng))
