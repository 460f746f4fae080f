"""Packed bit vectors, XNOR/popcount/majority primitives and the integer PRNG.

Bit convention: bit 1 stands for +1 and bit 0 for -1. Bit ``i`` of a vector
lives in word ``i // 64`` at position ``i % 64`` (least significant first),
and every bit past ``len_bits`` in the last word is kept at zero.

Nothing in this module uses floating point.
"""

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from bnn_evolve.errors import DimensionError, EmptyInputError

WORD_BITS = 64
MASK64 = (1 << 64) - 1
PROB_ONE = 1 << 32  # FixedProb denominator


def words_for(len_bits: int) -> int:
    """Number of 64-bit words needed to hold ``len_bits`` bits."""
    return (len_bits + WORD_BITS - 1) // WORD_BITS


def tail_mask(len_bits: int) -> np.uint64:
    """Mask of the valid bits in the last word of a ``len_bits`` vector."""
    rem = len_bits % WORD_BITS
    if rem == 0:
        return np.uint64(MASK64)
    return np.uint64((1 << rem) - 1)


def pack_rows(bits) -> np.ndarray:
    """Pack a boolean array along its last axis into little-endian uint64 words."""
    bits = np.asarray(bits, dtype=bool)
    n = bits.shape[-1]
    n_words = words_for(n)
    lead = bits.shape[:-1]
    if n_words == 0:
        return np.zeros(lead + (0,), dtype=np.uint64)
    padded = np.zeros(lead + (n_words * WORD_BITS,), dtype=bool)
    padded[..., :n] = bits
    packed = np.packbits(padded, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64)


def unpack_rows(words: np.ndarray, len_bits: int) -> np.ndarray:
    """Inverse of :func:`pack_rows`: uint64 words -> boolean array of ``len_bits``."""
    words = np.asarray(words, dtype=np.uint64)
    lead = words.shape[:-1]
    if len_bits == 0:
        return np.zeros(lead + (0,), dtype=bool)
    raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(raw, axis=-1, count=len_bits, bitorder="little").astype(bool)


class BitVector:
    """Immutable packed sequence of bits."""

    __slots__ = ("_words", "_len")

    def __init__(self, words, len_bits: int):
        if len_bits < 0:
            raise DimensionError(f"len_bits must be non-negative, got {len_bits}")
        arr = np.array(words, dtype=np.uint64).reshape(-1)
        if arr.shape[0] != words_for(len_bits):
            raise DimensionError(
                f"{len_bits} bits need {words_for(len_bits)} words, got {arr.shape[0]}"
            )
        if len_bits:
            arr[-1] &= tail_mask(len_bits)
        arr.flags.writeable = False
        self._words = arr
        self._len = len_bits

    @property
    def words(self) -> np.ndarray:
        return self._words

    @property
    def len_bits(self) -> int:
        return self._len

    def __len__(self) -> int:
        return self._len

    def __getitem__(self, index: int) -> int:
        if not 0 <= index < self._len:
            raise IndexError(f"bit index {index} out of range for length {self._len}")
        return int(self._words[index // WORD_BITS] >> np.uint64(index % WORD_BITS)) & 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self._len == other._len and bool(np.array_equal(self._words, other._words))

    def __hash__(self) -> int:
        return hash((self._len, self._words.tobytes()))

    def __repr__(self) -> str:
        if self._len <= 64:
            return f"BitVector('{self.to_string()}')"
        return f"BitVector(len_bits={self._len}, popcount={popcount(self)})"

    def to_bits(self) -> list[int]:
        return [int(b) for b in self.to_bool()]

    def to_bool(self) -> np.ndarray:
        return unpack_rows(self._words, self._len)

    def to_string(self) -> str:
        return "".join("1" if b else "0" for b in self.to_bool())

    def padding_is_canonical(self) -> bool:
        if not self._len:
            return True
        return (int(self._words[-1]) & ~int(tail_mask(self._len)) & MASK64) == 0

    @classmethod
    def from_bool(cls, bits) -> "BitVector":
        bits = np.asarray(bits, dtype=bool).reshape(-1)
        return cls(pack_rows(bits), bits.shape[0])

    @classmethod
    def from_string(cls, text: str) -> "BitVector":
        return bv_from_bits([int(ch) for ch in text if ch in "01"])


def bv_from_bits(bits: Sequence[int]) -> BitVector:
    """Build a vector whose bit ``i`` equals ``bits[i]``."""
    for b in bits:
        if b not in (0, 1):
            raise ValueError(f"bits must be 0 or 1, got {b!r}")
    return BitVector.from_bool(np.array(list(bits), dtype=bool))


def bv_zeros(len_bits: int) -> BitVector:
    return BitVector(np.zeros(words_for(len_bits), dtype=np.uint64), len_bits)


def bv_ones(len_bits: int) -> BitVector:
    return BitVector(np.full(words_for(len_bits), MASK64, dtype=np.uint64), len_bits)


def _check_same_length(a: BitVector, b: BitVector) -> None:
    if a.len_bits != b.len_bits:
        raise DimensionError(f"length mismatch: {a.len_bits} vs {b.len_bits}")


def xnor(a: BitVector, b: BitVector) -> BitVector:
    """Bit ``i`` is 1 iff ``a[i] == b[i]``."""
    _check_same_length(a, b)
    return BitVector(np.invert(np.bitwise_xor(a.words, b.words)), a.len_bits)


def xor(a: BitVector, b: BitVector) -> BitVector:
    _check_same_length(a, b)
    return BitVector(np.bitwise_xor(a.words, b.words), a.len_bits)


def bit_and(a: BitVector, b: BitVector) -> BitVector:
    _check_same_length(a, b)
    return BitVector(np.bitwise_and(a.words, b.words), a.len_bits)


def complement(v: BitVector) -> BitVector:
    return BitVector(np.invert(v.words), v.len_bits)


def popcount(v: BitVector) -> int:
    """Number of set bits among the first ``len_bits`` positions."""
    return int(np.bitwise_count(v.words).sum(dtype=np.int64))


def majority_bit(v: BitVector) -> int:
    """0 if the vector holds more 0s than 1s, 1 otherwise (ties give 1)."""
    if v.len_bits == 0:
        raise EmptyInputError("majority of an empty vector is undefined")
    return 1 if 2 * popcount(v) >= v.len_bits else 0


def flip_bit(v: BitVector, index: int) -> BitVector:
    """Copy of ``v`` with bit ``index`` toggled."""
    if not 0 <= index < v.len_bits:
        raise IndexError(f"bit index {index} out of range for length {v.len_bits}")
    words = v.words.copy()
    words[index // WORD_BITS] ^= np.uint64(1 << (index % WORD_BITS))
    return BitVector(words, v.len_bits)


@dataclass(frozen=True)
class FixedProb:
    """Probability ``threshold / 2**32``, stored as an unsigned 32-bit integer."""

    threshold: int

    def __post_init__(self):
        if not isinstance(self.threshold, (int, np.integer)) or isinstance(self.threshold, bool):
            raise TypeError(f"threshold must be an integer, got {type(self.threshold).__name__}")
        if not 0 <= int(self.threshold) < PROB_ONE:
            raise ValueError(f"threshold must lie in [0, 2**32), got {self.threshold}")
        object.__setattr__(self, "threshold", int(self.threshold))

    @classmethod
    def from_ratio(cls, num: int, den: int) -> "FixedProb":
        """``floor(num * 2**32 / den)``, clamped to the largest representable value."""
        if den <= 0 or num < 0 or num > den:
            raise ValueError(f"{num}/{den} is not a probability")
        return cls(min(num * PROB_ONE // den, PROB_ONE - 1))

    def __str__(self) -> str:
        return f"{self.threshold}/2^32"


PROB_ZERO = FixedProb(0)
PROB_MAX = FixedProb(PROB_ONE - 1)


# SplitMix64 constants. Draw k of a stream with key K is the high half of
# mix64(K + (k + 1) * GOLDEN) mod 2**64. Fixed for the lifetime of the repo.
_GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB
_LABEL_SALT = 0xD1B54A32D192ED03


def _mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    return z ^ (z >> np.uint64(31))


class DeterministicRng:
    """Counter-based SplitMix64 stream yielding uniform 32-bit words.

    Streams are single-owner. Parallel work takes child streams through
    :meth:`derive`, never a shared instance.
    """

    __slots__ = ("_key", "_counter", "stream_id")

    def __init__(self, key: int, stream_id: tuple = ()):
        self._key = key & MASK64
        self._counter = 0
        self.stream_id = tuple(stream_id)

    @property
    def consumed(self) -> int:
        return self._counter

    def next_u32(self) -> int:
        self._counter += 1
        z = (self._key + self._counter * _GOLDEN) & MASK64
        return _mix64(z) >> 32

    def draws(self, n: int) -> np.ndarray:
        """The next ``n`` draws as a uint32 array, in stream order."""
        if n < 0:
            raise ValueError(f"draw count must be non-negative, got {n}")
        counters = np.arange(self._counter + 1, self._counter + 1 + n, dtype=np.uint64)
        z = np.uint64(self._key) + counters * np.uint64(_GOLDEN)
        self._counter += n
        return (_mix64_array(z) >> np.uint64(32)).astype(np.uint32)

    def derive(self, *labels: int) -> "DeterministicRng":
        """Child stream at ``stream_id + labels``; independent of this stream's position."""
        key = self._key
        for label in labels:
            key = _mix64(key ^ _mix64((int(label) + _LABEL_SALT) & MASK64))
        return DeterministicRng(key, self.stream_id + tuple(labels))

    def __repr__(self) -> str:
        return f"DeterministicRng(stream_id={self.stream_id}, consumed={self._counter})"


def rng_derive(seed: int, labels: Iterable[int] = ()) -> DeterministicRng:
    """Stream for ``seed`` followed by the derivation path ``labels``."""
    seed = int(seed) & MASK64
    root = DeterministicRng(_mix64(seed), (seed,))
    labels = tuple(labels)
    return root.derive(*labels) if labels else root


def random_mask(rng: DeterministicRng, len_bits: int, p: FixedProb) -> BitVector:
    """Bit ``i`` set iff draw ``i`` < ``p.threshold``; consumes exactly ``len_bits`` draws."""
    draws = rng.draws(len_bits)
    return BitVector.from_bool(draws < np.uint32(p.threshold))
