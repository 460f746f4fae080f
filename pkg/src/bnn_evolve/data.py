"""MNIST IDX ingestion, binarization, batching and the fitness subset."""

import gzip
import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from bnn_evolve.bitcore import BitVector, DeterministicRng, pack_rows, words_for
from bnn_evolve.errors import (
    CountMismatchError,
    DimensionError,
    EmptyInputError,
    IdxMagicError,
    IdxTrailingDataError,
    IdxTruncatedError,
    LabelRangeError,
)

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_CLASSES = 10
MNIST_PIXELS = 28 * 28
DEFAULT_THRESHOLD = 128

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class IdxImages:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # (count, rows, cols) uint8


@dataclass(frozen=True, eq=False)
class BinaryDataset:
    """Packed binary samples with their class labels.

    ``words`` is ``(N, words_for(len_bits))`` uint64, one row per sample.
    MNIST splits have ``len_bits == 784``; other widths are used by tests.
    """

    words: np.ndarray
    labels: np.ndarray
    len_bits: int
    split: str = "train"

    def __post_init__(self):
        words = np.array(self.words, dtype=np.uint64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if words.ndim != 2 or words.shape[1] != words_for(self.len_bits):
            raise DimensionError(f"sample matrix {words.shape} does not hold {self.len_bits}-bit rows")
        if words.shape[0] != labels.shape[0]:
            raise DimensionError(f"{words.shape[0]} samples but {labels.shape[0]} labels")
        words.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def sample(self, i: int) -> BitVector:
        return BitVector(self.words[i], self.len_bits)

    @property
    def samples(self) -> list[BitVector]:
        return [self.sample(i) for i in range(len(self))]

    def pairs(self) -> list[tuple[BitVector, int]]:
        return [(self.sample(i), int(self.labels[i])) for i in range(len(self))]

    def subset(self, indices) -> "BinaryDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return BinaryDataset(self.words[indices], self.labels[indices], self.len_bits, self.split)

    def head(self, n: Optional[int]) -> "BinaryDataset":
        if n is None or n >= len(self):
            return self
        return BinaryDataset(self.words[:n], self.labels[:n], self.len_bits, self.split)

    def class_counts(self, classes: int = MNIST_CLASSES) -> list[int]:
        return [int(c) for c in np.bincount(self.labels, minlength=classes)]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[BitVector, int]], split: str = "train") -> "BinaryDataset":
        if not pairs:
            raise EmptyInputError("cannot build a dataset from no samples")
        len_bits = pairs[0][0].len_bits
        for vec, _ in pairs:
            if vec.len_bits != len_bits:
                raise DimensionError(f"sample widths differ: {vec.len_bits} vs {len_bits}")
        words = np.stack([vec.words for vec, _ in pairs]).reshape(len(pairs), words_for(len_bits))
        return cls(words, np.array([label for _, label in pairs]), len_bits, split)


def as_dataset(samples) -> BinaryDataset:
    """Accept either a dataset or a sequence of ``(BitVector, label)`` pairs."""
    if isinstance(samples, BinaryDataset):
        return samples
    return BinaryDataset.from_pairs(list(samples))


# IDX parsing


def _header(data: bytes, magic: int, n_fields: int) -> tuple:
    if len(data) < 4:
        raise IdxTruncatedError(f"{len(data)} bytes is shorter than the IDX magic")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise IdxMagicError(f"expected magic 0x{magic:08x}, found 0x{found:08x}")
    end = 4 * (n_fields + 1)
    if len(data) < end:
        raise IdxTruncatedError(f"header needs {end} bytes, got {len(data)}")
    return struct.unpack(f">{n_fields}I", data[4:end])


def _check_payload(data: bytes, offset: int, expected: int) -> None:
    have = len(data) - offset
    if have < expected:
        raise IdxTruncatedError(f"payload has {have} bytes, header promises {expected}")
    if have > expected:
        raise IdxTrailingDataError(f"{have - expected} bytes after the declared payload")


def parse_idx_images(data: bytes) -> IdxImages:
    """Big-endian magic 0x00000803, count, rows, cols, then row-major pixels."""
    count, rows, cols = _header(data, IDX_IMAGES_MAGIC, 3)
    _check_payload(data, 16, count * rows * cols)
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)
    return IdxImages(count, rows, cols, pixels)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Big-endian magic 0x00000801, count, then one byte per label in [0, 10)."""
    (count,) = _header(data, IDX_LABELS_MAGIC, 1)
    _check_payload(data, 8, count)
    labels = np.frombuffer(data, dtype=np.uint8, offset=8)
    bad = np.flatnonzero(labels >= MNIST_CLASSES)
    if bad.size:
        raise LabelRangeError(f"label {int(labels[bad[0]])} at index {int(bad[0])} is outside [0, {MNIST_CLASSES})")
    return labels.astype(np.int64)


def pair_idx(images: IdxImages, labels: np.ndarray) -> None:
    if images.count != len(labels):
        raise CountMismatchError(f"{images.count} images paired with {len(labels)} labels")


def serialize_idx_images(images: IdxImages) -> bytes:
    header = struct.pack(">4I", IDX_IMAGES_MAGIC, images.count, images.rows, images.cols)
    return header + np.ascontiguousarray(images.pixels, dtype=np.uint8).tobytes()


def serialize_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


# Binarization


def binarize(pixels, threshold: int = DEFAULT_THRESHOLD) -> BitVector:
    """Bit ``i`` is 1 iff pixel ``i`` >= ``threshold`` (sign of the centred pixel)."""
    flat = np.asarray(pixels, dtype=np.uint8).reshape(-1)
    return BitVector.from_bool(flat >= threshold)


def binarize_images(pixels: np.ndarray, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    """Packed ``(N, words)`` matrix for an ``(N, rows, cols)`` pixel block."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    return pack_rows(pixels.reshape(pixels.shape[0], -1) >= threshold)


# Loading from disk


def _read_maybe_gz(data_dir: str, name: str) -> bytes:
    plain = os.path.join(data_dir, name)
    if os.path.exists(plain):
        with open(plain, "rb") as f:
            return f.read()
    packed = plain + ".gz"
    if os.path.exists(packed):
        with gzip.open(packed, "rb") as f:
            return f.read()
    raise FileNotFoundError(f"neither {plain} nor {packed} exists")


def load_mnist_split(
    data_dir: str,
    split: str,
    threshold: int = DEFAULT_THRESHOLD,
    limit: Optional[int] = None,
) -> BinaryDataset:
    """Parse and binarize one split; ``limit`` keeps only its first items."""
    image_name, label_name = MNIST_FILES[split]
    images = parse_idx_images(_read_maybe_gz(data_dir, image_name))
    labels = parse_idx_labels(_read_maybe_gz(data_dir, label_name))
    pair_idx(images, labels)
    pixels = images.pixels
    if limit is not None:
        pixels, labels = pixels[:limit], labels[:limit]
    dataset = BinaryDataset(binarize_images(pixels, threshold), labels, images.rows * images.cols, split)
    logger.info("[Data] %s split: %d samples of %d bits (threshold %d)", split, len(dataset), dataset.len_bits, threshold)
    return dataset


def load_mnist(
    data_dir: str,
    threshold: int = DEFAULT_THRESHOLD,
    train_limit: Optional[int] = None,
    test_limit: Optional[int] = None,
) -> tuple[BinaryDataset, BinaryDataset]:
    train = load_mnist_split(data_dir, "train", threshold, train_limit)
    test = load_mnist_split(data_dir, "test", threshold, test_limit)
    return train, test


# Shuffling


def permutation(rng: DeterministicRng, n: int) -> np.ndarray:
    """Deterministic permutation of ``range(n)``: stable sort of one draw per index."""
    keys = rng.draws(n)
    return np.argsort(keys, kind="stable")


def make_batches(dataset: BinaryDataset, batch_size: int, rng: DeterministicRng) -> list[BinaryDataset]:
    """Shuffle once, then cut consecutive batches; the last short batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = permutation(rng, len(dataset))
    return [dataset.subset(order[i:i + batch_size]) for i in range(0, len(dataset), batch_size)]


def fitness_subset(dataset: BinaryDataset, n: int, rng: DeterministicRng) -> BinaryDataset:
    """``n`` samples drawn without replacement from ``dataset``."""
    if not 1 <= n <= len(dataset):
        raise ValueError(f"fitness subset size {n} outside 1..{len(dataset)}")
    return dataset.subset(permutation(rng, len(dataset))[:n])
