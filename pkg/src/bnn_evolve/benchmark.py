"""Throughput of the packed XNOR/popcount layer against a one-bit-per-byte reference."""

import logging
import platform
import time
from dataclasses import dataclass, field

import numpy as np
import psutil

from bnn_evolve.bitcore import BitVector, rng_derive
from bnn_evolve.network import BinaryLayer, init_random, layer_forward

logger = logging.getLogger(__name__)

CONVOLUTION_NOTE = (
    "The often quoted '58 times faster convolution operations' compare binary against "
    "floating-point convolutions; this report measures a fully-connected layer against "
    "an unpacked binary reference and gates nothing on that figure."
)


def unpacked_layer_forward(weights_u8: np.ndarray, x_u8: np.ndarray) -> np.ndarray:
    """Reference layer on 0/1 bytes: fire iff agreements are not outnumbered."""
    agreements = np.count_nonzero(weights_u8 == x_u8[None, :], axis=1)
    return (2 * agreements >= weights_u8.shape[1]).astype(np.uint8)


@dataclass
class BenchmarkResult:
    in_dim: int
    out_dim: int
    repetitions: int
    packed_secs: float
    unpacked_secs: float
    host: dict = field(default_factory=dict)

    @property
    def packed_ops_per_sec(self) -> float:
        return self.repetitions / self.packed_secs if self.packed_secs > 0 else float("inf")

    @property
    def unpacked_ops_per_sec(self) -> float:
        return self.repetitions / self.unpacked_secs if self.unpacked_secs > 0 else float("inf")

    @property
    def speedup(self) -> float:
        return self.unpacked_secs / self.packed_secs if self.packed_secs > 0 else float("inf")


def host_info() -> dict:
    mem = psutil.virtual_memory()
    return {
        "machine": platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "physical_cores": psutil.cpu_count(logical=False) or 0,
        "logical_cores": psutil.cpu_count(logical=True) or 0,
        "ram_total_mb": mem.total // (1024 * 1024),
    }


def run_benchmark(in_dim: int = 1024, out_dim: int = 1024, repetitions: int = 200, seed: int = 0) -> BenchmarkResult:
    """Time ``repetitions`` single-vector forwards through both paths.

    Before timing, both paths must agree bitwise on every input.
    """
    if in_dim < 1 or out_dim < 1 or repetitions < 1:
        raise ValueError(f"invalid benchmark shape {in_dim}x{out_dim} with {repetitions} repetitions")
    rng = rng_derive(seed, [in_dim, out_dim])
    layer: BinaryLayer = init_random(rng.derive(0), [in_dim, out_dim], depth_bounds=None).layers[0]
    draws = rng.derive(1).draws(repetitions * in_dim).reshape(repetitions, in_dim)
    inputs_bool = (draws >> np.uint32(31)).astype(bool)
    packed_inputs = [BitVector.from_bool(row) for row in inputs_bool]
    weights_u8 = layer.to_bool().astype(np.uint8)
    unpacked_inputs = inputs_bool.astype(np.uint8)

    for i in range(repetitions):
        packed = layer_forward(layer, packed_inputs[i]).to_bool().astype(np.uint8)
        reference = unpacked_layer_forward(weights_u8, unpacked_inputs[i])
        if not np.array_equal(packed, reference):
            raise AssertionError(f"packed and unpacked layers disagree on input {i}")

    start = time.perf_counter()
    for vec in packed_inputs:
        layer_forward(layer, vec)
    packed_secs = time.perf_counter() - start

    start = time.perf_counter()
    for x in unpacked_inputs:
        unpacked_layer_forward(weights_u8, x)
    unpacked_secs = time.perf_counter() - start

    result = BenchmarkResult(in_dim, out_dim, repetitions, packed_secs, unpacked_secs, host_info())
    logger.info("[Bench] %dx%d x%d: packed %.4fs, unpacked %.4fs", in_dim, out_dim, repetitions, packed_secs, unpacked_secs)
    return result


def format_report(result: BenchmarkResult) -> str:
    host = ", ".join(f"{k}={v}" for k, v in result.host.items())
    lines = [
        f"Layer {result.in_dim} -> {result.out_dim}, {result.repetitions} single-vector forwards",
        f"{'Path':<12} | {'Seconds':>10} | {'Forwards/s':>12}",
        "-" * 40,
        f"{'packed':<12} | {result.packed_secs:>10.4f} | {result.packed_ops_per_sec:>12.1f}",
        f"{'unpacked':<12} | {result.unpacked_secs:>10.4f} | {result.unpacked_ops_per_sec:>12.1f}",
        "-" * 40,
        f"Speedup (packed vs unpacked): {result.speedup:.2f}x",
        f"Host: {host}",
        CONVOLUTION_NOTE,
    ]
    return "\n".join(lines)
