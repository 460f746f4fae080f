"""Parses the four MNIST IDX files of a directory and prints their shape."""

import argparse
import os
import sys

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "src"))

from bnn_evolve.data import MNIST_CLASSES, load_mnist
from bnn_evolve.errors import BnnError


def main():
    parser = argparse.ArgumentParser(description="MNIST IDX sanity check")
    parser.add_argument("--data-dir", default=os.getenv("MNIST_DATA_DIR", "./data/mnist"))
    parser.add_argument("--threshold", type=int, default=128)
    args = parser.parse_args()

    print(f"Reading MNIST from {args.data_dir}...")
    try:
        train, test = load_mnist(args.data_dir, args.threshold)
    except (BnnError, OSError) as e:
        print(f"Error: {e}")
        sys.exit(1)

    for dataset in (train, test):
        counts = dataset.class_counts(MNIST_CLASSES)
        print(f"{dataset.split:<6} {len(dataset):>6} items of {dataset.len_bits} bits, first label {int(dataset.labels[0])}")
        print("       per class: " + " ".join(f"{c}:{n}" for c, n in enumerate(counts)))
    ok = len(train) == 60000 and len(test) == 10000
    print("Official split sizes." if ok else "Split sizes differ from the official 60000/10000.")


if __name__ == "__main__":
    main()
