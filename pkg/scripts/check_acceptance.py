"""Applies the reproduction bounds to a directory of training runs.

Runs are the metrics CSVs written by run_experiments.sh, named
<algorithm>_seed<S>_t<threshold>.csv. For each algorithm the last recorded
test accuracy of every seed is compared with its bound; an algorithm passes
when at least 2 of its seeds do. The medians must also order
counting > elite > naive.
"""

import argparse
import glob
import os
import re
import sys

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "src"))

from bnn_evolve.metrics_logger import last_test_ppm, read_metrics
from bnn_evolve.utils import format_ppm

# algorithm -> (comparison, bound in ppm)
BOUNDS = {
    "full": {"counting": (">=", 500_000), "elite": (">=", 380_000), "naive": ("<=", 200_000)},
    "desk": {"counting": (">=", 400_000), "elite": (">=", 250_000), "naive": ("<=", 200_000)},
}
ORDER = ("counting", "elite", "naive")
RUN_NAME = re.compile(r"(naive|elite|counting)_seed(\d+)_t(\d+)\.csv$")


def collect(run_dir, threshold=None):
    results = {}
    for path in sorted(glob.glob(os.path.join(run_dir, "*.csv"))):
        match = RUN_NAME.search(os.path.basename(path))
        if not match:
            continue
        algo, seed, t = match.group(1), int(match.group(2)), int(match.group(3))
        if threshold is not None and t != threshold:
            continue
        ppm = last_test_ppm(read_metrics(path))
        if ppm is not None:
            results.setdefault(algo, {})[seed] = ppm
    return results


def passes(ppm, bound):
    op, value = bound
    return ppm >= value if op == ">=" else ppm <= value


def median(values):
    ordered = sorted(values)
    return ordered[len(ordered) // 2]


def check(results, bounds, min_passing=2):
    ok = True
    print(f"{'Algorithm':<10} | {'Seeds':<24} | {'Bound':>12} | {'Passing':>7}")
    print("-" * 62)
    for algo in ORDER:
        seeds = results.get(algo, {})
        op, value = bounds[algo]
        n_pass = sum(passes(ppm, bounds[algo]) for ppm in seeds.values())
        shown = " ".join(f"{s}:{format_ppm(p)}" for s, p in sorted(seeds.items()))
        print(f"{algo:<10} | {shown:<24} | {op} {format_ppm(value):>9} | {n_pass:>7}")
        if n_pass < min_passing:
            ok = False
    medians = [median(results[a].values()) for a in ORDER if results.get(a)]
    if len(medians) == len(ORDER):
        ordered = medians[0] > medians[1] > medians[2]
        print(f"Ordering counting > elite > naive: {'yes' if ordered else 'NO'}")
        ok = ok and ordered
    else:
        print("Ordering not checked: some algorithms have no runs")
        ok = False
    return ok


def main():
    parser = argparse.ArgumentParser(description="Reproduction bounds for a sweep directory")
    parser.add_argument("run_dir", nargs="?", default="runs", help="directory with <algo>_seed<S>_t<T>.csv files")
    parser.add_argument("--scale", choices=sorted(BOUNDS), default="full", help="which set of bounds to apply")
    parser.add_argument("--threshold", type=int, help="only runs with this binarize threshold")
    args = parser.parse_args()

    results = collect(args.run_dir, args.threshold)
    if not results:
        print(f"No metrics found in {args.run_dir}")
        sys.exit(1)
    ok = check(results, BOUNDS[args.scale])
    print("PASS" if ok else "FAIL")
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
