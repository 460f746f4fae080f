import contextlib
import io
import os
import sys
import tempfile
import unittest

# Add src to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from bnn_evolve.metrics_logger import METRICS_HEADER, MetricsLogger, MetricsRecord, last_test_ppm, read_metrics


class TestMetricsLogger(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "sub", "metrics.csv")

    def tearDown(self):
        self.tmp.cleanup()

    def test_lines_are_flushed_as_written(self):
        with MetricsLogger(self.path, verbose=False) as metrics:
            metrics.log(0, 0, 2, 100_000, 98_000, 42949672)
            with open(self.path, encoding="utf-8") as f:
                self.assertEqual(f.read(), f"{METRICS_HEADER}\n0,0,2,100000,98000,42949672\n")
            metrics.log(1, 5, 11, 120_000, None, 42949672)
        with open(self.path, encoding="utf-8") as f:
            self.assertEqual(f.read().splitlines()[-1], "1,5,11,120000,,42949672")

    def test_read_back(self):
        with MetricsLogger(self.path, verbose=False) as metrics:
            metrics.log(0, 0, 1, 10, 20, 3)
            metrics.log(2, 7, 9, 30, None, 3)
        records = read_metrics(self.path)
        self.assertEqual(records, [MetricsRecord(0, 0, 1, 10, 20, 3), MetricsRecord(2, 7, 9, 30, None, 3)])
        self.assertEqual(last_test_ppm(records), 20)

    def test_torn_tail_is_ignored(self):
        with MetricsLogger(self.path, verbose=False) as metrics:
            metrics.log(0, 0, 1, 10, 20, 3)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write("1,4,5,1")
        self.assertEqual(len(read_metrics(self.path)), 1)

    def test_order_enforced(self):
        with MetricsLogger(self.path, verbose=False) as metrics:
            metrics.log(3, 10, 1, 0, None, 0)
            with self.assertRaises(ValueError):
                metrics.log(3, 11, 1, 0, None, 0)
            with self.assertRaises(ValueError):
                metrics.log(4, 9, 1, 0, None, 0)

    def test_deterministic_mode_zeroes_time(self):
        with MetricsLogger(self.path, deterministic=True, verbose=False) as metrics:
            record = metrics.log(0, 1234, 1, 0, 0, 0)
        self.assertEqual(record.elapsed_ms, 0)

    def test_banner_and_summary(self):
        out = io.StringIO()
        with contextlib.redirect_stdout(out), MetricsLogger(self.path) as metrics:
            metrics.log(0, 0, 1, 100_000, 90_000, 0)
            metrics.log(1, 1, 2, 100_000, None, 0)
            metrics.log(2, 2, 3, 200_000, 150_000, 0)
            summary = metrics.summary()
        self.assertEqual(out.getvalue().count("Step"), 2)
        self.assertIn("final test=15.0000%", summary)

    def test_not_a_metrics_file(self):
        os.makedirs(os.path.dirname(self.path))
        with open(self.path, "w", encoding="utf-8") as f:
            f.write("round,duration_s\n")
        with self.assertRaises(ValueError):
            read_metrics(self.path)


if __name__ == "__main__":
    unittest.main()
