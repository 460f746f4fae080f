import gzip
import os
import struct
import sys
import tempfile
import unittest

import numpy as np

# Add src to sys.path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

from bnn_evolve.bitcore import pack_rows, popcount, rng_derive
from bnn_evolve.data import (
    MNIST_FILES,
    BinaryDataset,
    binarize,
    binarize_images,
    fitness_subset,
    load_mnist,
    load_mnist_split,
    make_batches,
    parse_idx_images,
    parse_idx_labels,
    permutation,
    serialize_idx_images,
    serialize_idx_labels,
)
from bnn_evolve.errors import (
    CountMismatchError,
    IdxFormatError,
    IdxMagicError,
    IdxTrailingDataError,
    IdxTruncatedError,
    LabelRangeError,
)


def image_bytes(pixels: np.ndarray) -> bytes:
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", 0x803, count, rows, cols) + pixels.astype(np.uint8).tobytes()


def label_bytes(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", 0x801, len(labels)) + labels.tobytes()


def write_split(directory, split, pixels, labels, compress=False):
    image_name, label_name = MNIST_FILES[split]
    for name, payload in ((image_name, image_bytes(pixels)), (label_name, label_bytes(labels))):
        if compress:
            with gzip.open(os.path.join(directory, name + ".gz"), "wb") as f:
                f.write(payload)
        else:
            with open(os.path.join(directory, name), "wb") as f:
                f.write(payload)


class TestIdxParsing(unittest.TestCase):

    def setUp(self):
        gen = np.random.default_rng(0)
        self.pixels = gen.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
        self.labels = [3, 0, 9, 1, 1]

    def test_images(self):
        images = parse_idx_images(image_bytes(self.pixels))
        self.assertEqual((images.count, images.rows, images.cols), (5, 4, 3))
        self.assertTrue(np.array_equal(images.pixels, self.pixels))

    def test_labels(self):
        self.assertEqual(parse_idx_labels(label_bytes(self.labels)).tolist(), self.labels)

    def test_serialization_is_byte_exact(self):
        raw = image_bytes(self.pixels)
        self.assertEqual(serialize_idx_images(parse_idx_images(raw)), raw)
        raw = label_bytes(self.labels)
        self.assertEqual(serialize_idx_labels(parse_idx_labels(raw)), raw)

    def test_bad_magic(self):
        raw = bytearray(image_bytes(self.pixels))
        raw[3] = 0x01
        with self.assertRaises(IdxMagicError):
            parse_idx_images(bytes(raw))
        with self.assertRaises(IdxMagicError):
            parse_idx_labels(image_bytes(self.pixels))

    def test_truncated(self):
        raw = image_bytes(self.pixels)
        for cut in (2, 10, len(raw) - 1):
            with self.assertRaises(IdxTruncatedError):
                parse_idx_images(raw[:cut])
        with self.assertRaises(IdxTruncatedError):
            parse_idx_labels(label_bytes(self.labels)[:-2])

    def test_trailing_bytes(self):
        with self.assertRaises(IdxTrailingDataError):
            parse_idx_images(image_bytes(self.pixels) + b"\x00")
        with self.assertRaises(IdxTrailingDataError):
            parse_idx_labels(label_bytes(self.labels) + b"\x00")

    def test_label_range(self):
        with self.assertRaises(LabelRangeError):
            parse_idx_labels(label_bytes([1, 10]))

    def test_errors_share_a_base(self):
        self.assertTrue(issubclass(IdxMagicError, IdxFormatError))
        self.assertTrue(issubclass(IdxTruncatedError, ValueError))


class TestBinarize(unittest.TestCase):

    def test_threshold_is_inclusive(self):
        self.assertEqual(binarize([0, 127, 128, 255]).to_string(), "0011")
        self.assertEqual(binarize([0, 127, 128, 255], threshold=0).to_string(), "1111")

    def test_monotone_in_threshold(self):
        pixels = np.random.default_rng(5).integers(0, 256, size=784)
        counts = [popcount(binarize(pixels, t)) for t in range(0, 256, 16)]
        self.assertEqual(counts, sorted(counts, reverse=True))

    def test_batched_matches_single(self):
        pixels = np.random.default_rng(6).integers(0, 256, size=(3, 28, 28)).astype(np.uint8)
        words = binarize_images(pixels)
        for i in range(3):
            self.assertTrue(np.array_equal(words[i], binarize(pixels[i]).words))


class TestLoading(unittest.TestCase):

    def setUp(self):
        gen = np.random.default_rng(1)
        self.tmp = tempfile.TemporaryDirectory()
        self.train_pixels = gen.integers(0, 256, size=(12, 28, 28)).astype(np.uint8)
        self.train_labels = [i % 10 for i in range(12)]
        self.test_pixels = gen.integers(0, 256, size=(4, 28, 28)).astype(np.uint8)
        self.test_labels = [0, 1, 2, 3]

    def tearDown(self):
        self.tmp.cleanup()

    def test_raw_and_gz(self):
        write_split(self.tmp.name, "train", self.train_pixels, self.train_labels)
        write_split(self.tmp.name, "test", self.test_pixels, self.test_labels, compress=True)
        train, test = load_mnist(self.tmp.name)
        self.assertEqual((len(train), len(test)), (12, 4))
        self.assertEqual(train.len_bits, 784)
        self.assertEqual(test.labels.tolist(), self.test_labels)
        self.assertEqual(train.sample(0), binarize(self.train_pixels[0]))
        self.assertEqual(train.split, "train")
        self.assertEqual(test.split, "test")

    def test_limit(self):
        write_split(self.tmp.name, "train", self.train_pixels, self.train_labels)
        train = load_mnist_split(self.tmp.name, "train", limit=5)
        self.assertEqual(len(train), 5)
        self.assertEqual(train.class_counts(), [1, 1, 1, 1, 1, 0, 0, 0, 0, 0])

    def test_count_mismatch(self):
        write_split(self.tmp.name, "train", self.train_pixels, self.train_labels[:-1])
        with self.assertRaises(CountMismatchError):
            load_mnist_split(self.tmp.name, "train")

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_mnist_split(self.tmp.name, "test")


class TestSampling(unittest.TestCase):

    def setUp(self):
        # row i holds the binary code of i, so rows are distinct
        bits = ((np.arange(23)[:, None] >> np.arange(10)) & 1).astype(bool)
        self.data = BinaryDataset(pack_rows(bits), np.arange(23) % 10, 10)

    def test_permutation(self):
        order = permutation(rng_derive(1), 23)
        self.assertEqual(sorted(order.tolist()), list(range(23)))
        self.assertTrue(np.array_equal(order, permutation(rng_derive(1), 23)))
        self.assertFalse(np.array_equal(order, permutation(rng_derive(2), 23)))

    def test_batches_cover_everything_once(self):
        batches = make_batches(self.data, 5, rng_derive(3))
        self.assertEqual([len(b) for b in batches], [5, 5, 5, 5, 3])
        seen = sorted(int(l) for b in batches for l in b.labels)
        self.assertEqual(seen, sorted(self.data.labels.tolist()))

    def test_fitness_subset(self):
        subset = fitness_subset(self.data, 7, rng_derive(4))
        self.assertEqual(len(subset), 7)
        rows = {subset.words[i].tobytes() for i in range(7)}
        self.assertEqual(len(rows), 7)
        with self.assertRaises(ValueError):
            fitness_subset(self.data, 24, rng_derive(4))
        with self.assertRaises(ValueError):
            fitness_subset(self.data, 0, rng_derive(4))

    def test_fitness_subset_label_counts(self):
        labels = np.arange(10000) % 10
        data = BinaryDataset(np.zeros((10000, 1), dtype=np.uint64), labels, 8)
        # hypergeometric: 2000 of 10000 with 1000 per class, mean 200, sigma ~12
        for seed in range(3):
            counts = fitness_subset(data, 2000, rng_derive(seed)).class_counts(10)
            self.assertEqual(sum(counts), 2000)
            for count in counts:
                self.assertLessEqual(abs(count - 200), 4 * 12, counts)

    def test_head_and_pairs(self):
        self.assertIs(self.data.head(None), self.data)
        self.assertEqual(len(self.data.head(3)), 3)
        rebuilt = BinaryDataset.from_pairs(self.data.pairs())
        self.assertTrue(np.array_equal(rebuilt.words, self.data.words))


@unittest.skipUnless(os.environ.get("MNIST_DATA_DIR"), "MNIST_DATA_DIR not set")
class TestOfficialMnist(unittest.TestCase):

    def test_split_sizes(self):
        train, test = load_mnist(os.environ["MNIST_DATA_DIR"])
        self.assertEqual(len(train), 60000)
        self.assertEqual(len(test), 10000)
        self.assertEqual(int(train.labels[0]), 5)


if __name__ == "__main__":
    unittest.main()
