"""Command-line entry point: ``bnn-evolve {train,eval,bench,inspect}``."""

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

from bnn_evolve.benchmark import format_report, run_benchmark
from bnn_evolve.config import DATA_DIR_ENV, load_config
from bnn_evolve.data import MNIST_CLASSES, load_mnist_split
from bnn_evolve.errors import BnnError, ConfigError
from bnn_evolve.network import read_network
from bnn_evolve.objective import PPM, LabelCodec, evaluate_accuracy
from bnn_evolve.trainer import run_training
from bnn_evolve.utils import format_ppm, setup_logging

# (flag, config key, help, takes a value)
TRAIN_FLAGS = [
    ("--algo", "algorithm", "naive | elite | counting", True),
    ("--layers", "sizes", "comma-separated widths, e.g. 784,100,100,100,100,1000", True),
    ("--classes", "classes", "number of classes", True),
    ("--bits-per-label", "bits_per_label", "output bits per class (k)", True),
    ("--flip-prob", "flip_prob", "per-weight flip probability NUM/DEN", True),
    ("--children", "children", "children per parent and step", True),
    ("--elite-size", "elite_size", "networks kept by the elite algorithm", True),
    ("--lambda", "lambda", "ancestor weight in the lineage score, NUM/DEN", True),
    ("--batch-size", "batch_size", "samples per counting-error batch", True),
    ("--schedule", "schedule", "cosine flip-probability schedule p_min,p_max,T", True),
    ("--seed", "seed", "root seed", True),
    ("--time-budget", "time_budget_secs", "wall-clock budget in seconds (or none)", True),
    ("--step-budget", "step_budget", "step budget (or none)", True),
    ("--evaluation-budget", "evaluation_budget", "network evaluation budget (or none)", True),
    ("--eval-every", "eval_every", "steps between test evaluations", True),
    ("--fitness-subset-size", "fitness_subset_size", "train samples used for fitness", True),
    ("--binarize-threshold", "binarize_threshold", "pixel threshold for a 1 bit", True),
    ("--train-limit", "train_limit", "use only the first N train items", True),
    ("--test-limit", "test_limit", "use only the first N test items", True),
    ("--data-dir", "data_dir", f"directory with the MNIST IDX files (default ${DATA_DIR_ENV})", True),
    ("--metrics-out", "metrics_out", "metrics CSV path", True),
    ("--model-out", "model_out", "path for the best network (BNNV1)", True),
    ("--log-dir", "log_dir", "directory for bnn_evolve.log", True),
    ("--workers", "workers", "threads evaluating children", True),
    ("--keep-parent", "keep_parent", "let parents compete with their children", False),
    ("--deterministic-metrics", "deterministic_metrics", "write elapsed_ms as 0", False),
]


def _dest(key: str) -> str:
    return f"cfg_{key}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnn-evolve", description="Float-free evolutionary training of binary neural networks")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a network under a budget")
    train.add_argument("--config", help="key=value configuration file")
    for flag, key, help_text, takes_value in TRAIN_FLAGS:
        if takes_value:
            train.add_argument(flag, dest=_dest(key), help=help_text)
        else:
            train.add_argument(flag, dest=_dest(key), action=argparse.BooleanOptionalAction, default=None, help=help_text)

    ev = sub.add_parser("eval", help="test accuracy of a saved network")
    ev.add_argument("--model", required=True, help="BNNV1 model file")
    ev.add_argument("--data-dir", help=f"directory with the MNIST IDX files (default ${DATA_DIR_ENV})")
    ev.add_argument("--bits-per-label", type=int, help="k; inferred from the output width when omitted")
    ev.add_argument("--binarize-threshold", type=int, default=128)
    ev.add_argument("--test-limit", type=int)

    bench = sub.add_parser("bench", help="packed vs unpacked layer throughput")
    bench.add_argument("--in-dim", type=int, default=1024)
    bench.add_argument("--out-dim", type=int, default=1024)
    bench.add_argument("--repetitions", type=int, default=200)
    bench.add_argument("--seed", type=int, default=0)

    inspect = sub.add_parser("inspect", help="sizes and weight popcounts of a saved network")
    inspect.add_argument("--model", required=True, help="BNNV1 model file")
    return parser


def cmd_train(args, parser) -> int:
    overrides = {key: getattr(args, _dest(key)) for _, key, _, _ in TRAIN_FLAGS}
    config = load_config(args.config, overrides)
    if not config.data_dir:
        parser.error(f"train needs --data-dir, data_dir in the config file, or ${DATA_DIR_ENV}")
    setup_logging(config.log_dir, logging.DEBUG if args.verbose else logging.INFO)
    result = run_training(config)
    print(f"[Trainer] stopped on {result.stop_reason} after {result.steps} steps, {result.evaluations} evaluations")
    print(f"[Trainer] best fitness-subset accuracy {format_ppm(result.best.current_ppm)}")
    return 0


def cmd_eval(args, parser) -> int:
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        parser.error(f"eval needs --data-dir or ${DATA_DIR_ENV}")
    net = read_network(args.model)
    k = args.bits_per_label
    if k is None:
        if net.output_dim % MNIST_CLASSES:
            raise ConfigError(f"output width {net.output_dim} is not a multiple of {MNIST_CLASSES}; pass --bits-per-label")
        k = net.output_dim // MNIST_CLASSES
    codec = LabelCodec(MNIST_CLASSES, k)
    test = load_mnist_split(data_dir, "test", args.binarize_threshold, args.test_limit)
    fit = evaluate_accuracy(net, test, codec)
    print(f"test accuracy {format_ppm(fit.ppm)} ({fit.correct}/{fit.total}, {fit.ppm} ppm)")
    return 0


def cmd_bench(args, parser) -> int:
    print(format_report(run_benchmark(args.in_dim, args.out_dim, args.repetitions, args.seed)))
    return 0


def cmd_inspect(args, parser) -> int:
    net = read_network(args.model)
    print(f"sizes: {','.join(str(s) for s in net.sizes)}  depth: {net.depth}  weights: {net.weight_count()}")
    print(f"{'Layer':<6} | {'In':>6} | {'Out':>6} | {'Ones':>10} | {'Density':>10}")
    print("-" * 50)
    for idx, layer in enumerate(net.layers):
        ones = layer.popcount()
        density = ones * PPM // (layer.in_dim * layer.out_dim)
        print(f"{idx:<6} | {layer.in_dim:>6} | {layer.out_dim:>6} | {ones:>10} | {format_ppm(density):>10}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "inspect": cmd_inspect}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args, parser)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except ConfigError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return 2
    except (BnnError, OSError, ValueError) as e:
        print(f"{parser.prog}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
