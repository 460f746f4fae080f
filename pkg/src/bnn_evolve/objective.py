"""Majority loss over k-bit label groups, exact accuracy and lineage blending.

All arithmetic is integer: accuracies are parts per million, probabilities
are 32-bit fixed point.
"""

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from bnn_evolve.bitcore import PROB_ONE, BitVector, FixedProb, pack_rows, unpack_rows
from bnn_evolve.data import BinaryDataset, as_dataset
from bnn_evolve.errors import DimensionError, EmptyInputError
from bnn_evolve.network import BinaryNetwork, network_forward_batch

PPM = 1_000_000


@dataclass(frozen=True)
class LabelCodec:
    """``classes`` groups of ``bits_per_label`` output bits; group ``c`` votes for class ``c``."""

    classes: int
    bits_per_label: int

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.bits_per_label < 1:
            raise ValueError(f"bits_per_label must be >= 1, got {self.bits_per_label}")

    @property
    def width(self) -> int:
        return self.classes * self.bits_per_label

    def check_network(self, net: BinaryNetwork) -> None:
        if net.output_dim != self.width:
            raise DimensionError(
                f"network emits {net.output_dim} bits, codec needs {self.classes} x {self.bits_per_label} = {self.width}"
            )


@dataclass(frozen=True)
class Fitness:
    correct: int
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise EmptyInputError("fitness needs at least one sample")
        if not 0 <= self.correct <= self.total:
            raise ValueError(f"correct={self.correct} outside 0..{self.total}")

    @property
    def ppm(self) -> int:
        return self.correct * PPM // self.total


@dataclass(frozen=True)
class ScoredNetwork:
    """A network with its fitness now and the blended score of its lineage."""

    net: BinaryNetwork
    current_ppm: int
    lineage_ppm: int

    def __post_init__(self):
        for name in ("current_ppm", "lineage_ppm"):
            value = getattr(self, name)
            if not 0 <= value <= PPM:
                raise ValueError(f"{name}={value} outside 0..{PPM}")


class EvaluationCounter:
    """Thread-safe tally of network evaluations on sample sets."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._value += n

    @property
    def value(self) -> int:
        return self._value


def group_counts(out_bits: np.ndarray, codec: LabelCodec) -> np.ndarray:
    """Set-bit count of every label group, shape ``(B, classes)``."""
    b = out_bits.shape[0]
    return out_bits.reshape(b, codec.classes, codec.bits_per_label).sum(axis=-1, dtype=np.int64)


def predict_batch(out_words: np.ndarray, codec: LabelCodec) -> np.ndarray:
    """Class per packed output row; ties go to the lowest class index."""
    counts = group_counts(unpack_rows(out_words, codec.width), codec)
    return np.argmax(counts, axis=-1)


def predict_class(output: BitVector, codec: LabelCodec) -> int:
    """The class whose group holds the most 1s; lowest index on ties."""
    if output.len_bits != codec.width:
        raise DimensionError(f"output has {output.len_bits} bits, codec expects {codec.width}")
    return int(predict_batch(output.words[None, :], codec)[0])


def target_matrix(labels, codec: LabelCodec) -> np.ndarray:
    """Unpacked targets ``(B, width)``: group ``label`` all ones, everything else zero."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= codec.classes):
        raise ValueError(f"labels must lie in [0, {codec.classes})")
    groups = np.arange(codec.width) // codec.bits_per_label
    return groups[None, :] == labels[:, None]


def target_output(label: int, codec: LabelCodec) -> BitVector:
    if not 0 <= label < codec.classes:
        raise ValueError(f"label {label} outside [0, {codec.classes})")
    return BitVector(pack_rows(target_matrix([label], codec))[0], codec.width)


def evaluate_accuracy(net: BinaryNetwork, samples, codec: LabelCodec, counter: Optional[EvaluationCounter] = None) -> Fitness:
    """Exact top-1 count of ``net`` on ``samples`` (a dataset or ``(BitVector, label)`` pairs)."""
    if not isinstance(samples, BinaryDataset) and not samples:
        raise EmptyInputError("cannot evaluate on an empty sample set")
    dataset = as_dataset(samples)
    if len(dataset) == 0:
        raise EmptyInputError("cannot evaluate on an empty sample set")
    if dataset.len_bits != net.input_dim:
        raise DimensionError(f"samples have {dataset.len_bits} bits, network expects {net.input_dim}")
    codec.check_network(net)
    predicted = predict_batch(network_forward_batch(net, dataset.words), codec)
    if counter is not None:
        counter.add()
    return Fitness(int(np.count_nonzero(predicted == dataset.labels)), len(dataset))


def blend_score(current_ppm: int, ancestor_ppm: int, lam: FixedProb) -> int:
    """``floor((lam * ancestor + (2**32 - lam) * current) / 2**32)`` with ``lam`` in fixed point."""
    for value in (current_ppm, ancestor_ppm):
        if not 0 <= value <= PPM:
            raise ValueError(f"score {value} outside 0..{PPM}")
    weight = lam.threshold
    return (weight * ancestor_ppm + (PROB_ONE - weight) * current_ppm) >> 32
