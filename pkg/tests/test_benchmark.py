import os
import sys
import unittest
from unittest.mock import patch

import numpy as np

# Add src to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from bnn_evolve import benchmark
from bnn_evolve.benchmark import CONVOLUTION_NOTE, BenchmarkResult, format_report, run_benchmark, unpacked_layer_forward


class TestBenchmark(unittest.TestCase):

    def test_reference_layer(self):
        weights = np.array([[1, 1, 0], [0, 0, 0]], dtype=np.uint8)
        x = np.array([1, 0, 0], dtype=np.uint8)
        self.assertEqual(unpacked_layer_forward(weights, x).tolist(), [1, 1])
        self.assertEqual(unpacked_layer_forward(weights, np.array([0, 1, 1], dtype=np.uint8)).tolist(), [0, 0])

    def test_single_repetition_report(self):
        result = run_benchmark(96, 40, repetitions=1, seed=3)
        self.assertEqual(result.repetitions, 1)
        report = format_report(result)
        self.assertIn("Layer 96 -> 40", report)
        self.assertIn("Speedup", report)
        self.assertIn(CONVOLUTION_NOTE, report)
        self.assertIn("physical_cores", result.host)

    def test_packed_path_is_faster_on_a_wide_layer(self):
        result = run_benchmark(1024, 1024, repetitions=20)
        self.assertGreater(result.speedup, 1.0)

    def test_disagreement_aborts_before_timing(self):
        with patch.object(benchmark, "unpacked_layer_forward", side_effect=lambda w, x: np.zeros(w.shape[0], dtype=np.uint8) + 2):
            with self.assertRaises(AssertionError):
                run_benchmark(16, 8, repetitions=2)

    def test_invalid_shape(self):
        with self.assertRaises(ValueError):
            run_benchmark(0, 8)
        with self.assertRaises(ValueError):
            run_benchmark(8, 8, repetitions=0)

    def test_zero_time_is_reported_as_infinite(self):
        result = BenchmarkResult(8, 8, 1, 0.0, 0.5)
        self.assertEqual(result.speedup, float("inf"))


if __name__ == "__main__":
    unittest.main()
