"""Float-free training steps: naive perturbation, elite search and counting-error.

Every step is a deterministic function of its inputs and rng stream. Child ``c``
of a step draws from ``rng.derive(c)`` (elite: ``rng.derive(parent, c)``), so
serial and threaded evaluation return the same networks.
"""

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from bnn_evolve.bitcore import PROB_ONE, BitVector, DeterministicRng, FixedProb, pack_rows, unpack_rows
from bnn_evolve.data import BinaryDataset, as_dataset
from bnn_evolve.errors import ConfigError, DimensionError, EmptyInputError
from bnn_evolve.network import BinaryNetwork, clone_and_flip, network_forward_batch
from bnn_evolve.objective import (
    EvaluationCounter,
    Fitness,
    LabelCodec,
    ScoredNetwork,
    blend_score,
    evaluate_accuracy,
    target_matrix,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("naive", "elite", "counting")


@dataclass(frozen=True)
class ScheduleConfig:
    """Cosine annealing of the flip probability between ``p_max`` and ``p_min``."""

    p_min: FixedProb
    p_max: FixedProb
    period: int  # T_i, in steps

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError(f"schedule period must be >= 1, got {self.period}")
        if self.p_min.threshold > self.p_max.threshold:
            raise ConfigError(f"p_min {self.p_min} exceeds p_max {self.p_max}")


@dataclass(frozen=True)
class EvolverConfig:
    algorithm: str = "counting"
    p: FixedProb = field(default_factory=lambda: FixedProb.from_ratio(1, 100))
    children: int = 8
    elite_size: int = 4
    lam: FixedProb = field(default_factory=lambda: FixedProb.from_ratio(1, 4))
    batch_size: int = 64
    keep_parent: bool = False
    schedule: Optional[ScheduleConfig] = None
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}")
        for name in ("children", "elite_size", "batch_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class WrongMask:
    """Per-layer weights (packed like the layer) and input nodes marked wrong."""

    weight_masks: tuple
    node_masks: tuple

    def matches(self, net: BinaryNetwork) -> bool:
        if len(self.weight_masks) != net.depth or len(self.node_masks) != net.depth:
            return False
        for mask, nodes, layer in zip(self.weight_masks, self.node_masks, net.layers):
            if mask.shape != layer.weights.shape or nodes.len_bits != layer.in_dim:
                return False
        return True

    def marked_weights(self) -> list[int]:
        return [int(np.bitwise_count(m).sum(dtype=np.int64)) for m in self.weight_masks]

    def marked_nodes(self) -> list[int]:
        return [int(np.bitwise_count(n.words).sum(dtype=np.int64)) for n in self.node_masks]

    def is_empty(self) -> bool:
        return not any(self.marked_weights())

    def weight_bool(self, layer: int, in_dim: int) -> np.ndarray:
        return unpack_rows(self.weight_masks[layer], in_dim)

    @classmethod
    def from_bool(cls, weight_masks: Sequence[np.ndarray], node_masks: Sequence[np.ndarray]) -> "WrongMask":
        return cls(
            tuple(pack_rows(m) for m in weight_masks),
            tuple(BitVector.from_bool(n) for n in node_masks),
        )

    @classmethod
    def full(cls, net: BinaryNetwork) -> "WrongMask":
        return cls.from_bool(
            [np.ones(layer.shape, dtype=bool) for layer in net.layers],
            [np.ones(layer.in_dim, dtype=bool) for layer in net.layers],
        )

    @classmethod
    def empty(cls, net: BinaryNetwork) -> "WrongMask":
        return cls.from_bool(
            [np.zeros(layer.shape, dtype=bool) for layer in net.layers],
            [np.zeros(layer.in_dim, dtype=bool) for layer in net.layers],
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, WrongMask):
            return NotImplemented
        return (
            len(self.weight_masks) == len(other.weight_masks)
            and all(np.array_equal(a, b) for a, b in zip(self.weight_masks, other.weight_masks))
            and self.node_masks == other.node_masks
        )


def _parallel_map(fn: Callable, items: Sequence, workers: int, executor: Optional[Executor] = None) -> list:
    """Order-preserving map; threads only change wall time, never results.

    A caller-owned ``executor`` is reused; otherwise a pool lives for this call only.
    """
    if len(items) <= 1 or (executor is None and workers <= 1):
        return [fn(item) for item in items]
    if executor is not None:
        return list(executor.map(fn, items))
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# Naive perturbation


def naive_select(
    net: BinaryNetwork,
    rng: DeterministicRng,
    p: FixedProb,
    fitness_set,
    codec: LabelCodec,
    parent_fitness: Optional[Fitness] = None,
    counter: Optional[EvaluationCounter] = None,
) -> tuple[BinaryNetwork, Fitness]:
    """One mutant; the parent survives only if it is strictly better."""
    fitness_set = as_dataset(fitness_set)
    if parent_fitness is None:
        parent_fitness = evaluate_accuracy(net, fitness_set, codec, counter)
    mutant = clone_and_flip(net, rng, p)
    mutant_fitness = evaluate_accuracy(mutant, fitness_set, codec, counter)
    if parent_fitness.correct > mutant_fitness.correct:
        return net, parent_fitness
    return mutant, mutant_fitness


def naive_step(
    net: BinaryNetwork,
    rng: DeterministicRng,
    p: FixedProb,
    fitness_set,
    codec: LabelCodec,
    parent_fitness: Optional[Fitness] = None,
    counter: Optional[EvaluationCounter] = None,
) -> BinaryNetwork:
    return naive_select(net, rng, p, fitness_set, codec, parent_fitness, counter)[0]


# Elite search


def elite_step(
    elite: Sequence[ScoredNetwork],
    rng: DeterministicRng,
    config: EvolverConfig,
    fitness_set,
    codec: LabelCodec,
    counter: Optional[EvaluationCounter] = None,
    executor: Optional[Executor] = None,
) -> list[ScoredNetwork]:
    """Every elite member spawns ``config.children`` mutants; the best ``elite_size`` survive.

    Candidates are ranked by lineage score, descending; ties fall back to
    (parent order, child index) with a kept parent ranked after its children.
    """
    if not elite:
        raise EmptyInputError("elite_step needs a non-empty elite")
    pool_size = len(elite) * (config.children + (1 if config.keep_parent else 0))
    if pool_size < config.elite_size:
        raise ConfigError(f"candidate pool of {pool_size} cannot fill an elite of {config.elite_size}")
    fitness_set = as_dataset(fitness_set)
    tasks = [(i, c) for i in range(len(elite)) for c in range(config.children)]

    def spawn(task):
        i, c = task
        parent = elite[i]
        child = clone_and_flip(parent.net, rng.derive(i, c), config.p)
        fit = evaluate_accuracy(child, fitness_set, codec, counter)
        lineage = blend_score(fit.ppm, parent.lineage_ppm, config.lam)
        return (i, c), ScoredNetwork(child, fit.ppm, lineage)

    pool = _parallel_map(spawn, tasks, config.workers, executor)
    if config.keep_parent:
        pool.extend(((i, config.children), parent) for i, parent in enumerate(elite))
    pool.sort(key=lambda entry: (-entry[1].lineage_ppm, entry[0]))
    return [scored for _, scored in pool[:config.elite_size]]


# Counting-error attribution


def culpability_counts(weights: np.ndarray, inputs: np.ndarray, produced: np.ndarray, wrong: np.ndarray) -> np.ndarray:
    """How many wrong samples each weight's vote agreed with its neuron's wrong output.

    ``weights`` (out, in), ``inputs`` (B, in), ``produced`` and ``wrong`` (B, out), all
    boolean. The vote of weight (j, i) on sample s is ``xnor(w_ji, x_si)``; it is
    culpable when ``wrong[s, j]`` and the vote equals ``produced[s, j]``.
    """
    wrong_one = (wrong & produced).astype(np.int64)
    wrong_zero = (wrong & ~produced).astype(np.int64)
    x = inputs.astype(np.int64)
    # matches for a 0 weight: vote is not-x, so x=1 backs a produced 0 and x=0 a produced 1
    zero_weight = wrong_zero.T @ x + wrong_one.T @ (1 - x)
    totals = wrong.sum(axis=0, dtype=np.int64)[:, None]
    return np.where(weights, totals - zero_weight, zero_weight)


def mark_wrong(net: BinaryNetwork, batch, codec: LabelCodec) -> WrongMask:
    """Backward marking of weights and nodes blamed for batch-majority output errors.

    * output bit j is wrong when it differs from its target in >= ceil(B/2) samples;
    * weight (j, i) is wrong when bit j is wrong and its vote matched the produced
      wrong value in >= ceil(B/2) samples;
    * input node i is wrong when strictly more than half of its out_dim weights are;
    * a wrong input node of layer l is a wrong output bit of layer l-1 in every
      sample, its produced value being the wrong value.
    """
    batch = as_dataset(batch)
    if len(batch) == 0:
        raise EmptyInputError("mark_wrong needs a non-empty batch")
    if batch.len_bits != net.input_dim:
        raise DimensionError(f"batch has {batch.len_bits} bits, network expects {net.input_dim}")
    codec.check_network(net)

    out_words, layer_inputs = network_forward_batch(net, batch.words, trace=True)
    produced_words = layer_inputs[1:] + [out_words]
    threshold = (len(batch) + 1) // 2

    produced = unpack_rows(out_words, net.output_dim)
    errors = produced != target_matrix(batch.labels, codec)
    wrong_bits = errors.sum(axis=0) >= threshold
    wrong = errors & wrong_bits[None, :]

    weight_masks = [None] * net.depth
    node_masks = [None] * net.depth
    for idx in range(net.depth - 1, -1, -1):
        layer = net.layers[idx]
        inputs = unpack_rows(layer_inputs[idx], layer.in_dim)
        produced = unpack_rows(produced_words[idx], layer.out_dim)
        marked = culpability_counts(layer.to_bool(), inputs, produced, wrong) >= threshold
        nodes = 2 * marked.sum(axis=0) > layer.out_dim
        weight_masks[idx] = marked
        node_masks[idx] = nodes
        wrong = np.broadcast_to(nodes[None, :], inputs.shape)
    mask = WrongMask.from_bool(weight_masks, node_masks)
    logger.debug("[Evolver] wrong weights per layer %s, wrong nodes %s", mask.marked_weights(), mask.marked_nodes())
    return mask


def counting_error_select(
    net: BinaryNetwork,
    rng: DeterministicRng,
    config: EvolverConfig,
    batch,
    codec: LabelCodec,
    counter: Optional[EvaluationCounter] = None,
    executor: Optional[Executor] = None,
) -> tuple[BinaryNetwork, Fitness, WrongMask]:
    """Mutate only the wrong weights, keep the best child on the batch.

    Ties go to the lowest child index; a kept parent ranks after every child.
    """
    batch = as_dataset(batch)
    mask = mark_wrong(net, batch, codec)

    def spawn(c):
        child = clone_and_flip(net, rng.derive(c), config.p, mask)
        return child, evaluate_accuracy(child, batch, codec, counter)

    pool = _parallel_map(spawn, list(range(config.children)), config.workers, executor)
    if config.keep_parent:
        pool.append((net, evaluate_accuracy(net, batch, codec, counter)))
    best_net, best_fit = pool[0]
    for candidate, fit in pool[1:]:
        if fit.correct > best_fit.correct:
            best_net, best_fit = candidate, fit
    return best_net, best_fit, mask


def counting_error_step(
    net: BinaryNetwork,
    rng: DeterministicRng,
    config: EvolverConfig,
    batch,
    codec: LabelCodec,
    counter: Optional[EvaluationCounter] = None,
    executor: Optional[Executor] = None,
) -> BinaryNetwork:
    return counting_error_select(net, rng, config, batch, codec, counter, executor)[0]


# Cosine flip-probability schedule, in integers only.
# _COS_TABLE[i] = cos(i/QUARTER_STEPS * pi/2) * 2**32, built with a
# fixed-point Taylor series at import.

QUARTER_STEPS = 1024
_HALF_STEPS = 2 * QUARTER_STEPS
_PI_Q64 = 0x3243F6A8885A308D3  # pi * 2**64


def _cos_q32(angle_q64: int) -> int:
    x2 = (angle_q64 * angle_q64) >> 64
    term = total = 1 << 64
    sign = -1
    k = 1
    while term:
        term = ((term * x2) >> 64) // ((2 * k - 1) * (2 * k))
        total += sign * term
        sign = -sign
        k += 1
    return max(0, (total + (1 << 31)) >> 32)


_COS_TABLE = [_cos_q32(_PI_Q64 * i // _HALF_STEPS) for i in range(QUARTER_STEPS + 1)]
_COS_TABLE[0] = PROB_ONE
_COS_TABLE[QUARTER_STEPS] = 0


def _cos_half_turn(u: int) -> int:
    """cos(u / _HALF_STEPS * pi) * 2**32 for integer ``u`` in [0, _HALF_STEPS]."""
    if u <= QUARTER_STEPS:
        return _COS_TABLE[u]
    return -_COS_TABLE[_HALF_STEPS - u]


def anneal_probability(t_cur: int, schedule: ScheduleConfig) -> FixedProb:
    """p_min + (p_max - p_min) * (1 + cos(pi * t_cur / T_i)) / 2 for ``t_cur`` in [0, T_i]."""
    t_i = schedule.period
    if not 0 <= t_cur <= t_i:
        raise ValueError(f"t_cur {t_cur} outside 0..{t_i}")
    pos = t_cur * _HALF_STEPS
    idx, frac = divmod(pos, t_i)
    cos_q32 = _cos_half_turn(idx)
    if frac:
        cos_q32 += (_cos_half_turn(idx + 1) - cos_q32) * frac // t_i
    half = (PROB_ONE + cos_q32) >> 1
    low, high = schedule.p_min.threshold, schedule.p_max.threshold
    return FixedProb(low + (((high - low) * half) >> 32))


def flip_schedule(step: int, schedule: ScheduleConfig) -> FixedProb:
    """Warm-restarting schedule: ``T_cur = step mod (T_i + 1)`` so both endpoints occur.

    ``T_i = 0`` is already rejected when the :class:`ScheduleConfig` is built.
    """
    return anneal_probability(step % (schedule.period + 1), schedule)
