import contextlib
import io
import logging
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

import numpy as np

# Add src to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from bnn_evolve.bitcore import FixedProb, rng_derive
from bnn_evolve.cli import build_parser, main
from bnn_evolve.config import RunConfig, describe, load_config, parse_config_text
from bnn_evolve.errors import ConfigError
from bnn_evolve.network import init_random, write_network
from bnn_evolve.objective import ScoredNetwork
from bnn_evolve.trainer import TrainingResult
from bnn_evolve.utils import format_ppm, parse_bool, parse_int_list, parse_rational, parse_schedule, setup_logging

from test_data import write_split


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


class TestParsers(unittest.TestCase):

    def test_rational(self):
        self.assertEqual(parse_rational("1/100").threshold, (1 << 32) // 100)
        self.assertEqual(parse_rational("1/4"), FixedProb(1 << 30))
        self.assertEqual(parse_rational("0").threshold, 0)
        self.assertEqual(parse_rational("1").threshold, (1 << 32) - 1)
        for bad in ("1/0", "3/2", "-1/2", "abc", "1/x", ""):
            with self.assertRaises(ConfigError, msg=bad):
                parse_rational(bad)

    def test_lists_schedules_bools(self):
        self.assertEqual(parse_int_list("784, 100,10"), [784, 100, 10])
        with self.assertRaises(ConfigError):
            parse_int_list("1,a")
        schedule = parse_schedule("1/1000,1/50,500")
        self.assertEqual(schedule.period, 500)
        self.assertEqual(schedule.p_max, parse_rational("1/50"))
        with self.assertRaises(ConfigError):
            parse_schedule("1/50,1/1000,500")
        with self.assertRaises(ConfigError):
            parse_schedule("1/50,500")
        self.assertTrue(parse_bool("yes"))
        self.assertFalse(parse_bool("0"))
        with self.assertRaises(ConfigError):
            parse_bool("maybe")

    def test_format_ppm(self):
        self.assertEqual(format_ppm(600_000), "60.0000%")
        self.assertEqual(format_ppm(1), "0.0001%")
        self.assertEqual(format_ppm(None), "n/a")


class TestRunConfig(unittest.TestCase):

    def test_defaults_match_best_configuration(self):
        with patch.dict(os.environ, {}, clear=True):
            config = load_config()
        self.assertEqual(config.sizes, [784, 100, 100, 100, 100, 1000])
        self.assertEqual(config.algorithm, "counting")
        self.assertEqual(config.codec.width, 1000)
        self.assertEqual(config.time_budget_secs, 1800)
        self.assertGreaterEqual(config.workers, 1)
        self.assertIsNone(config.data_dir)

    def test_file_then_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.conf")
            with open(path, "w", encoding="utf-8") as f:
                f.write("# desk run\nalgorithm = elite\nseed=4  # inline\nflip_prob=1/50\n\ndata_dir=/from/file\n")
            config = load_config(path, {"seed": "9", "children": None})
        self.assertEqual(config.algorithm, "elite")
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.children, 8)
        self.assertEqual(config.flip_prob, parse_rational("1/50"))
        self.assertEqual(config.data_dir, "/from/file")

    def test_environment_fallback(self):
        with patch.dict(os.environ, {"MNIST_DATA_DIR": "/env/mnist"}, clear=True):
            self.assertEqual(load_config().data_dir, "/env/mnist")
            self.assertEqual(load_config(overrides={"data_dir": "/flag"}).data_dir, "/flag")

    def test_unknown_key_and_bad_line(self):
        with self.assertRaises(ConfigError):
            parse_config_text("learning_rate=0.1\n")
        with self.assertRaises(ConfigError):
            parse_config_text("seed\n")
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/run.conf")

    def test_validation(self):
        with self.assertRaises(ConfigError):
            RunConfig(sizes=[784, 100, 999]).validate()
        with self.assertRaises(ConfigError):
            RunConfig(time_budget_secs=None, step_budget=None).validate()
        with self.assertRaises(ConfigError):
            RunConfig(algorithm="sgd").validate()
        with self.assertRaises(ConfigError):
            RunConfig(bits_per_label=0, sizes=[784, 0]).validate()
        RunConfig(time_budget_secs=None, step_budget=10).validate()

    def test_describe_reads_back(self):
        config = RunConfig(
            algorithm="naive", seed=3, schedule=parse_schedule("1/1000,1/50,100"),
            step_budget=50, model_out=None, workers=2,
        ).validate()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "echo.conf")
            with open(path, "w", encoding="utf-8") as f:
                f.write(describe(config))
            with patch.dict(os.environ, {}, clear=True):
                self.assertEqual(load_config(path), config)

    def test_evolver_config(self):
        config = RunConfig(children=3, keep_parent=True)
        evolver = config.evolver_config(FixedProb(7))
        self.assertEqual(evolver.p, FixedProb(7))
        self.assertEqual(evolver.children, 3)
        self.assertTrue(evolver.keep_parent)


class TestCli(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        gen = np.random.default_rng(8)
        write_split(self.tmp.name, "train", gen.integers(0, 256, size=(40, 28, 28)), [i % 10 for i in range(40)])
        write_split(self.tmp.name, "test", gen.integers(0, 256, size=(20, 28, 28)), [i % 10 for i in range(20)])
        self.model = os.path.join(self.tmp.name, "model.bnn")
        write_network(init_random(rng_derive(1), [784, 6, 10]), self.model)

    def tearDown(self):
        setup_logging(None, logging.WARNING)
        self.tmp.cleanup()

    def test_flip_prob_flag(self):
        config = load_config(overrides={"flip_prob": "1/100"})
        self.assertEqual(config.flip_prob.threshold, 42949672)

    def test_missing_data_dir_is_usage_error(self):
        with patch.dict(os.environ, {}, clear=True):
            code, _, err = run_cli(["train", "--step-budget", "1"])
        self.assertEqual(code, 2)
        self.assertIn("data-dir", err)

    def test_bad_values_are_usage_errors(self):
        code, _, _ = run_cli(["train", "--data-dir", self.tmp.name, "--flip-prob", "1/0"])
        self.assertEqual(code, 2)
        code, _, _ = run_cli(["train", "--no-such-flag"])
        self.assertEqual(code, 2)
        code, _, _ = run_cli(["frobnicate"])
        self.assertEqual(code, 2)

    def test_eval_is_idempotent(self):
        first = run_cli(["eval", "--model", self.model, "--data-dir", self.tmp.name])
        second = run_cli(["eval", "--model", self.model, "--data-dir", self.tmp.name])
        self.assertEqual(first[0], 0)
        self.assertEqual(first[:2], second[:2])
        self.assertIn("/20", first[1])

    def test_eval_missing_model(self):
        code, _, err = run_cli(["eval", "--model", os.path.join(self.tmp.name, "none.bnn"), "--data-dir", self.tmp.name])
        self.assertEqual(code, 1)
        self.assertIn("FileNotFoundError", err)

    def test_inspect(self):
        code, out, _ = run_cli(["inspect", "--model", self.model])
        self.assertEqual(code, 0)
        self.assertIn("sizes: 784,6,10", out)
        self.assertEqual(len([line for line in out.splitlines() if line[:1].isdigit()]), 2)

    def test_corrupt_model_exits_one(self):
        bad = os.path.join(self.tmp.name, "bad.bnn")
        with open(bad, "wb") as f:
            f.write(b"NOPE!")
        code, _, err = run_cli(["inspect", "--model", bad])
        self.assertEqual(code, 1)
        self.assertIn("BadMagicError", err)

    def test_bench(self):
        code, out, _ = run_cli(["bench", "--in-dim", "64", "--out-dim", "16", "--repetitions", "2"])
        self.assertEqual(code, 0)
        self.assertIn("Speedup", out)

    def test_train(self):
        metrics = os.path.join(self.tmp.name, "out", "metrics.csv")
        model = os.path.join(self.tmp.name, "out", "best.bnn")
        code, out, _ = run_cli([
            "train", "--data-dir", self.tmp.name, "--algo", "naive", "--layers", "784,8,20",
            "--bits-per-label", "2", "--step-budget", "3", "--time-budget", "none",
            "--fitness-subset-size", "10", "--metrics-out", metrics, "--model-out", model,
            "--log-dir", os.path.join(self.tmp.name, "logs"), "--workers", "1",
        ])
        self.assertEqual(code, 0)
        self.assertIn("step_budget", out)
        self.assertTrue(os.path.exists(model))
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, "logs", "bnn_evolve.log")))
        with open(metrics, encoding="utf-8") as f:
            self.assertEqual(len(f.read().splitlines()), 5)

    def test_boolean_flags_override_the_config_file(self):
        conf = os.path.join(self.tmp.name, "run.conf")
        with open(conf, "w", encoding="utf-8") as f:
            f.write("keep_parent=true\ndeterministic_metrics=true\nstep_budget=1\n")
        done = TrainingResult(ScoredNetwork(init_random(rng_derive(0), [784, 6, 10]), 0, 0), [], 0, 0, "step_budget")
        with patch("bnn_evolve.cli.run_training", return_value=done) as train:
            code, _, _ = run_cli(["train", "--config", conf, "--data-dir", self.tmp.name, "--no-keep-parent", "--log-dir", "none"])
        self.assertEqual(code, 0)
        config = train.call_args.args[0]
        self.assertFalse(config.keep_parent)
        self.assertTrue(config.deterministic_metrics)

    def test_boolean_flags_default_to_unset(self):
        args = build_parser().parse_args(["train", "--keep-parent", "--no-deterministic-metrics"])
        self.assertIs(args.cfg_keep_parent, True)
        self.assertIs(args.cfg_deterministic_metrics, False)
        self.assertIsNone(build_parser().parse_args(["train"]).cfg_keep_parent)


if __name__ == "__main__":
    unittest.main()
