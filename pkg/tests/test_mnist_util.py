import gzip
import os
import struct

import numpy as np
import pytest

from library import mnist_util
from library.mnist_util import (
    IdxFormatError,
    IdxLengthError,
    PartitionError,
    RawImage,
    Sample,
    encode_idx_images,
    encode_idx_labels,
    load_mnist_split,
    parse_idx_images,
    parse_idx_labels,
    partition_iid,
    preprocess,
    preprocess_batch,
    read_idx_file,
    select_test_samples,
)
from tests.conftest import MNIST_DIR_ENV_NAME, locate_real_mnist_files, make_digit_grids, make_labels


class TestIdx:
    def test_parse_images(self):
        grids = np.arange(2 * 28 * 28, dtype=np.uint64).reshape(2, 28, 28) % 256
        parsed = parse_idx_images(encode_idx_images(grids))
        assert parsed.shape == (2, 28, 28)
        assert parsed.dtype == np.uint8
        assert np.array_equal(parsed, grids.astype(np.uint8))

    def test_header_layout(self):
        data = encode_idx_images(np.zeros((3, 28, 28), dtype=np.uint8))
        assert struct.unpack(">iiii", data[:16]) == (2051, 3, 28, 28)
        assert len(data) == 16 + 3 * 28 * 28
        assert struct.unpack(">ii", encode_idx_labels([1, 2])[:8]) == (2049, 2)

    def test_parse_labels(self):
        assert parse_idx_labels(encode_idx_labels([0, 1, 2, 9])).tolist() == [0, 1, 2, 9]

    def test_zero_count(self):
        assert parse_idx_images(encode_idx_images(np.zeros((0, 28, 28)))).shape == (0, 28, 28)
        assert parse_idx_labels(encode_idx_labels([])).shape == (0,)

    def test_bad_magic(self):
        data = struct.pack(">iiii", 2049, 1, 28, 28) + bytes(28 * 28)
        with pytest.raises(IdxFormatError):
            parse_idx_images(data)
        with pytest.raises(IdxFormatError):
            parse_idx_labels(struct.pack(">ii", 2051, 1) + b"\x00")

    def test_truncated(self):
        data = encode_idx_images(np.zeros((2, 28, 28), dtype=np.uint8))
        with pytest.raises(IdxLengthError):
            parse_idx_images(data[:-1])
        with pytest.raises(IdxLengthError):
            parse_idx_images(data[:10])
        with pytest.raises(IdxLengthError):
            parse_idx_labels(encode_idx_labels([1, 2, 3])[:-2])

    def test_read_gzip_and_raw(self, tmp_path):
        labels = encode_idx_labels([2, 0, 1])
        (tmp_path / "raw").write_bytes(labels)
        (tmp_path / "packed.gz").write_bytes(gzip.compress(labels))
        assert read_idx_file(str(tmp_path / "raw")).tolist() == [2, 0, 1]
        assert read_idx_file(str(tmp_path / "packed.gz")).tolist() == [2, 0, 1]


class TestPreprocess:
    def test_shape_and_range(self):
        grids = make_digit_grids([0, 1, 2], seed=5)
        pixels = preprocess_batch(grids)
        assert pixels.shape == (3, 64)
        assert pixels.min() >= 0.0 and pixels.max() <= 1.0

    def test_border_is_cropped(self):
        grid = np.zeros((28, 28), dtype=np.uint8)
        grid[1, 1] = 255
        grid[26, 26] = 255
        assert np.all(preprocess(RawImage(grid, 0)).pixels == 0.0)

    def test_first_kept_pixel_pools_into_first_block(self):
        grid = np.zeros((28, 28), dtype=np.uint8)
        grid[2, 2] = 255
        pixels = preprocess(RawImage(grid, 1)).pixels
        assert pixels[0] == pytest.approx(1.0 / 9.0)
        assert np.all(pixels[1:] == 0.0)

    def test_all_white(self):
        grid = np.full((28, 28), 255, dtype=np.uint8)
        assert np.all(preprocess(RawImage(grid, 2)).pixels == 1.0)

    def test_block_order_is_row_major(self):
        grid = np.zeros((28, 28), dtype=np.uint8)
        # block (row 1, col 0) covers raw rows 5..7, cols 2..4
        grid[5:8, 2:5] = 255
        pixels = preprocess(RawImage(grid, 0)).pixels
        assert pixels[8] == 1.0
        assert np.sum(pixels) == 1.0

    def test_batch_matches_single(self):
        grids = make_digit_grids([0, 1, 2, 1], seed=9)
        batch = preprocess_batch(grids)
        for i, grid in enumerate(grids):
            assert np.array_equal(batch[i], preprocess(RawImage(grid, 0)).pixels)

    def test_rejects_other_labels(self):
        with pytest.raises(AssertionError):
            preprocess(RawImage(np.zeros((28, 28), dtype=np.uint8), 7))


class TestLoad:
    def test_filters_classes(self, mnist_files):
        train = load_mnist_split(mnist_files["train_images"], mnist_files["train_labels"])
        assert len(train) == 180
        assert {s.label for s in train} == {0, 1, 2}
        raw_labels = read_idx_file(mnist_files["train_labels"])
        for s in train:
            assert raw_labels[s.index] == s.label

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mnist_split(str(tmp_path / "nope"), str(tmp_path / "nope-labels"))

    def test_count_mismatch(self, tmp_path):
        images = tmp_path / "images"
        labels = tmp_path / "labels"
        images.write_bytes(encode_idx_images(np.zeros((2, 28, 28), dtype=np.uint8)))
        labels.write_bytes(encode_idx_labels([0, 1, 2]))
        with pytest.raises(IdxLengthError):
            load_mnist_split(str(images), str(labels))

    def test_wrong_image_size(self, tmp_path):
        images = tmp_path / "images"
        labels = tmp_path / "labels"
        images.write_bytes(encode_idx_images(np.zeros((3, 20, 20), dtype=np.uint8)))
        labels.write_bytes(encode_idx_labels([0, 1, 2]))
        with pytest.raises(IdxFormatError, match="28x28"):
            load_mnist_split(str(images), str(labels))


def _pool(n_per_class):
    labels = make_labels(n_per_class, seed=11)
    return [Sample(np.full(64, 0.5), int(label), i) for i, label in enumerate(labels)]


class TestPartition:
    def test_sizes_and_disjoint(self):
        clients = partition_iid(_pool(40), 5, 20, seed=0)
        assert [len(c) for c in clients] == [20] * 5
        assert [c.client_id for c in clients] == list(range(5))
        indices = [s.index for c in clients for s in c.samples]
        assert len(indices) == len(set(indices)) == 100

    def test_class_balance(self):
        clients = partition_iid(_pool(100), 5, 30, seed=4)
        for c in clients:
            counts = c.class_counts()
            assert counts.sum() == 30
            assert np.all(np.abs(counts - 10) <= 1)

    def test_deterministic(self):
        a = partition_iid(_pool(30), 3, 10, seed=7)
        b = partition_iid(_pool(30), 3, 10, seed=7)
        c = partition_iid(_pool(30), 3, 10, seed=8)
        assert [[s.index for s in x.samples] for x in a] == [[s.index for s in x.samples] for x in b]
        assert [[s.index for s in x.samples] for x in a] != [[s.index for s in x.samples] for x in c]

    def test_not_enough_data(self):
        with pytest.raises(PartitionError, match="short by 10"):
            partition_iid(_pool(30), 10, 10, seed=0)

    def test_exact_fit(self):
        clients = partition_iid(_pool(10), 3, 10, seed=0)
        assert sum(len(c) for c in clients) == 30

    def test_test_selection(self):
        pool = _pool(50)
        chosen = select_test_samples(pool, 60, seed=0)
        assert len(chosen) == 60
        assert np.bincount([s.label for s in chosen]).tolist() == [20, 20, 20]
        assert len(select_test_samples(pool, 1000, seed=0)) == len(pool)


def test_stack_samples_empty():
    pixels, labels = mnist_util.stack_samples([])
    assert pixels.shape == (0, 64) and labels.shape == (0,)


class TestRealMnistFiles:
    def test_skips_without_env(self, monkeypatch):
        monkeypatch.delenv(MNIST_DIR_ENV_NAME, raising=False)
        with pytest.raises(pytest.skip.Exception):
            locate_real_mnist_files()

    def test_skips_on_missing_files(self, monkeypatch, tmp_path):
        monkeypatch.setenv(MNIST_DIR_ENV_NAME, str(tmp_path))
        with pytest.raises(pytest.skip.Exception, match="not found"):
            locate_real_mnist_files()

    def test_finds_raw_and_gzipped(self, monkeypatch, mnist_files):
        monkeypatch.setenv(MNIST_DIR_ENV_NAME, os.path.dirname(mnist_files["train_images"]))
        assert locate_real_mnist_files() == mnist_files
