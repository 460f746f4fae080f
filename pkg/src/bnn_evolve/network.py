"""Binary fully-connected layers and networks.

A neuron compares its weight row with the input bit by bit (XNOR), then fires
1 unless the disagreements outnumber the agreements (majority vote, ties to 1).
This equals ``sign(sum((2w-1)(2x-1)))`` with ``sign(0) = +1``. The XOR form of
the same layer is obtained by complementing every weight row.

No bias, no batch normalization, no scaling factors.
"""

import logging
import os
import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from bnn_evolve.bitcore import (
    BitVector,
    DeterministicRng,
    FixedProb,
    majority_bit,
    pack_rows,
    tail_mask,
    unpack_rows,
    words_for,
    xnor,
)
from bnn_evolve.errors import (
    BadMagicError,
    DimensionError,
    ModelFormatError,
    SizeOverflowError,
    TruncatedStreamError,
)

if TYPE_CHECKING:
    from bnn_evolve.evolvers import WrongMask

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_BOUNDS = (2, 5)
MODEL_MAGIC = b"BNNV1"
MAX_MODEL_DEPTH = 1024
MAX_LAYER_BITS = 1 << 32

# Upper bound on the (samples x neurons x words) temporaries of a batched pass.
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class BinaryLayer:
    """``out_dim`` neurons over ``in_dim`` input bits; row ``j`` holds neuron ``j``'s weights.

    ``weights`` is the packed ``(out_dim, words_for(in_dim))`` uint64 matrix.
    """

    weights: np.ndarray
    in_dim: int

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.uint64)
        if w.ndim != 2:
            raise DimensionError(f"weights must be a 2-D word matrix, got shape {w.shape}")
        if self.in_dim < 1 or w.shape[0] < 1:
            raise DimensionError(f"layer needs in_dim >= 1 and out_dim >= 1, got {w.shape[0]}x{self.in_dim}")
        if w.shape[1] != words_for(self.in_dim):
            raise DimensionError(
                f"rows of {self.in_dim} bits need {words_for(self.in_dim)} words, got {w.shape[1]}"
            )
        w[:, -1] &= tail_mask(self.in_dim)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.out_dim, self.in_dim)

    def row(self, j: int) -> BitVector:
        return BitVector(self.weights[j], self.in_dim)

    @property
    def rows(self) -> tuple[BitVector, ...]:
        return tuple(self.row(j) for j in range(self.out_dim))

    def to_bool(self) -> np.ndarray:
        return unpack_rows(self.weights, self.in_dim)

    def popcount(self) -> int:
        return int(np.bitwise_count(self.weights).sum(dtype=np.int64))

    @classmethod
    def from_rows(cls, rows: Sequence[BitVector]) -> "BinaryLayer":
        if not rows:
            raise DimensionError("a layer needs at least one row")
        in_dim = rows[0].len_bits
        for r in rows:
            if r.len_bits != in_dim:
                raise DimensionError(f"row lengths differ: {r.len_bits} vs {in_dim}")
        return cls(np.stack([r.words for r in rows]), in_dim)

    @classmethod
    def from_bool(cls, matrix) -> "BinaryLayer":
        matrix = np.asarray(matrix, dtype=bool)
        if matrix.ndim != 2:
            raise DimensionError(f"expected a 2-D bit matrix, got shape {matrix.shape}")
        return cls(pack_rows(matrix), matrix.shape[1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryLayer):
            return NotImplemented
        return self.in_dim == other.in_dim and bool(np.array_equal(self.weights, other.weights))

    def __repr__(self) -> str:
        return f"BinaryLayer({self.out_dim}x{self.in_dim})"


@dataclass(frozen=True, eq=False)
class BinaryNetwork:
    """Ordered stack of binary layers; layer ``l`` feeds layer ``l + 1``."""

    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise DimensionError(
                    f"layer chain broken: {prev.out_dim} outputs feed a layer expecting {nxt.in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def weight_count(self) -> int:
        return sum(layer.out_dim * layer.in_dim for layer in self.layers)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryNetwork):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            a == b for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self) -> str:
        return f"BinaryNetwork(sizes={self.sizes})"


def validate_sizes(sizes: Sequence[int], depth_bounds: Optional[tuple[int, int]] = DEFAULT_DEPTH_BOUNDS) -> list[int]:
    """Check layer widths; depth outside ``depth_bounds`` is allowed with a warning."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise DimensionError(f"need at least an input and an output width, got {sizes}")
    if any(s < 1 for s in sizes):
        raise DimensionError(f"all widths must be >= 1, got {sizes}")
    depth = len(sizes) - 1
    if depth_bounds is not None:
        low, high = depth_bounds
        if not low <= depth <= high:
            logger.warning("[Network] depth %d outside the configured range %d..%d", depth, low, high)
    return sizes


# Forward passes


def neuron_forward(weights_row: BitVector, inputs: BitVector) -> int:
    """Majority of the XNOR agreements between a weight row and the input."""
    return majority_bit(xnor(weights_row, inputs))


def layer_agreements(layer: BinaryLayer, x_words: np.ndarray) -> np.ndarray:
    """Per-sample, per-neuron agreement counts for packed inputs ``(B, words)``."""
    x_words = np.asarray(x_words, dtype=np.uint64)
    if x_words.ndim != 2 or x_words.shape[1] != layer.weights.shape[1]:
        raise DimensionError(
            f"inputs of shape {x_words.shape} do not match a layer over {layer.in_dim} bits"
        )
    n = x_words.shape[0]
    per_sample = max(1, layer.weights.size)
    chunk = max(1, _CHUNK_ELEMENTS // per_sample)
    out = np.empty((n, layer.out_dim), dtype=np.int64)
    for start in range(0, n, chunk):
        block = x_words[start:start + chunk]
        diff = np.bitwise_xor(block[:, None, :], layer.weights[None, :, :])
        out[start:start + chunk] = layer.in_dim - np.bitwise_count(diff).sum(axis=-1, dtype=np.int64)
    return out


def layer_forward_batch(layer: BinaryLayer, x_words: np.ndarray) -> np.ndarray:
    """Packed outputs ``(B, words_for(out_dim))`` for packed inputs ``(B, words)``."""
    fire = 2 * layer_agreements(layer, x_words) >= layer.in_dim
    return pack_rows(fire)


def layer_forward(layer: BinaryLayer, inputs: BitVector) -> BitVector:
    if inputs.len_bits != layer.in_dim:
        raise DimensionError(f"input has {inputs.len_bits} bits, layer expects {layer.in_dim}")
    out = layer_forward_batch(layer, inputs.words[None, :])
    return BitVector(out[0], layer.out_dim)


def network_forward_batch(net: BinaryNetwork, x_words: np.ndarray, trace: bool = False):
    """Batched forward pass; with ``trace`` also returns each layer's packed input."""
    current = np.asarray(x_words, dtype=np.uint64)
    if current.ndim != 2 or current.shape[1] != words_for(net.input_dim):
        raise DimensionError(f"inputs of shape {current.shape} do not match input_dim {net.input_dim}")
    layer_inputs = []
    for layer in net.layers:
        if trace:
            layer_inputs.append(current)
        current = layer_forward_batch(layer, current)
    if trace:
        return current, layer_inputs
    return current


def network_forward(net: BinaryNetwork, inputs: BitVector, trace: bool = False):
    """Sequential composition of :func:`layer_forward`.

    With ``trace`` the result is ``(output, [input of layer 0, input of layer 1, ...])``.
    """
    if inputs.len_bits != net.input_dim:
        raise DimensionError(f"input has {inputs.len_bits} bits, network expects {net.input_dim}")
    current = inputs
    layer_inputs = []
    for layer in net.layers:
        layer_inputs.append(current)
        current = layer_forward(layer, current)
    if trace:
        return current, layer_inputs
    return current


# Construction and mutation


def init_random(
    rng: DeterministicRng,
    sizes: Sequence[int],
    depth_bounds: Optional[tuple[int, int]] = DEFAULT_DEPTH_BOUNDS,
) -> BinaryNetwork:
    """Uniform random weights; one draw per weight, layer-major, row-major, bit-major.

    A weight is the top bit of its draw.
    """
    sizes = validate_sizes(sizes, depth_bounds)
    layers = []
    for in_dim, out_dim in zip(sizes, sizes[1:]):
        draws = rng.draws(out_dim * in_dim).reshape(out_dim, in_dim)
        layers.append(BinaryLayer.from_bool((draws >> np.uint32(31)).astype(bool)))
    return BinaryNetwork(tuple(layers))


def clone_and_flip(
    net: BinaryNetwork,
    rng: DeterministicRng,
    p: FixedProb,
    mask: Optional["WrongMask"] = None,
) -> BinaryNetwork:
    """Copy of ``net`` where every candidate weight flips with probability ``p``.

    One draw is consumed per weight in init order whether or not the weight is a
    candidate, so a full mask behaves exactly like no mask on the same stream.
    """
    if mask is not None and not mask.matches(net):
        raise DimensionError(f"mask shapes do not match network sizes {net.sizes}")
    threshold = np.uint32(p.threshold)
    layers = []
    for idx, layer in enumerate(net.layers):
        draws = rng.draws(layer.out_dim * layer.in_dim).reshape(layer.out_dim, layer.in_dim)
        flips = pack_rows(draws < threshold)
        if mask is not None:
            flips &= mask.weight_masks[idx]
        layers.append(BinaryLayer(np.bitwise_xor(layer.weights, flips), layer.in_dim))
    return BinaryNetwork(tuple(layers))


# BNNV1 serialization: magic, u32 depth, (depth + 1) u32 sizes, then every
# row of every layer as little-endian u64 words in init draw order.


def save_network(net: BinaryNetwork) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<I", net.depth)]
    parts.append(struct.pack(f"<{net.depth + 1}I", *net.sizes))
    for layer in net.layers:
        parts.append(layer.weights.astype("<u8").tobytes())
    return b"".join(parts)


def load_network(data: bytes) -> BinaryNetwork:
    data = bytes(data)
    magic_len = len(MODEL_MAGIC)
    if len(data) < magic_len and MODEL_MAGIC.startswith(data):
        raise TruncatedStreamError("stream ends inside the magic")
    if data[:magic_len] != MODEL_MAGIC:
        raise BadMagicError(f"not a BNNV1 stream (starts with {data[:magic_len]!r})")
    offset = magic_len

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise TruncatedStreamError(f"need {n} bytes at offset {offset}, stream has {len(data)}")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    (depth,) = struct.unpack("<I", take(4))
    if not 1 <= depth <= MAX_MODEL_DEPTH:
        raise SizeOverflowError(f"depth {depth} outside 1..{MAX_MODEL_DEPTH}")
    sizes = list(struct.unpack(f"<{depth + 1}I", take(4 * (depth + 1))))
    for in_dim, out_dim in zip(sizes, sizes[1:]):
        if in_dim == 0 or out_dim == 0 or in_dim * out_dim > MAX_LAYER_BITS:
            raise SizeOverflowError(f"layer {out_dim}x{in_dim} is empty or too large")

    layers = []
    for in_dim, out_dim in zip(sizes, sizes[1:]):
        n_words = words_for(in_dim)
        raw = take(8 * n_words * out_dim)
        words = np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(out_dim, n_words)
        if np.any(words[:, -1] & ~tail_mask(in_dim)):
            raise ModelFormatError(f"padding bits set in a {out_dim}x{in_dim} layer")
        layers.append(BinaryLayer(words, in_dim))
    if offset != len(data):
        raise ModelFormatError(f"{len(data) - offset} trailing bytes after the last layer")
    return BinaryNetwork(tuple(layers))


def write_network(net: BinaryNetwork, path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(save_network(net))


def read_network(path: str) -> BinaryNetwork:
    with open(path, "rb") as f:
        return load_network(f.read())
