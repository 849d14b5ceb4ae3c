import os

import numpy as np
import pytest

from library import model_util
from library.mnist_util import Sample, encode_idx_images, encode_idx_labels, preprocess_batch, write_idx_file
from library.quantum_util import LayerTemplate

MNIST_DIR_ENV_NAME = "QFAL_MNIST_DIR"
MNIST_FILE_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def pytest_configure(config):
    config.addinivalue_line("markers", f"slow: needs the real MNIST files in ${MNIST_DIR_ENV_NAME}")


def make_digit_grids(labels, seed: int = 0) -> np.ndarray:
    """
    28x28 uint8 strokes that look enough like 0, 1 and 2 for a small classifier:
    a ring, a vertical bar and a Z shape, randomly shifted and with background noise.
    Any other label gets a random blob.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:28, 0:28]
    grids = np.zeros((len(labels), 28, 28), dtype=np.uint8)
    for i, label in enumerate(labels):
        g = np.zeros((28, 28), dtype=np.float64)
        if label == 0:
            r = np.hypot(rows - 14, cols - 14)
            g[(r >= 5.5) & (r <= 9.0)] = 255
        elif label == 1:
            g[5:23, 12:16] = 255
        elif label == 2:
            g[6:9, 8:21] = 255
            g[19:22, 8:21] = 255
            for k in range(10):
                g[9 + k, 19 - k : 21 - k] = 255
        else:
            g[rng.integers(4, 20) : rng.integers(21, 25), rng.integers(4, 20) : rng.integers(21, 25)] = 200
        g = np.roll(g, (rng.integers(-2, 3), rng.integers(-2, 3)), axis=(0, 1))
        g = np.clip(g + rng.integers(0, 30, size=(28, 28)), 0, 255)
        grids[i] = g.astype(np.uint8)
    return grids


def make_labels(per_class: int, extra_label: int = 7, extra: int = 0, seed: int = 0) -> np.ndarray:
    labels = np.array([0, 1, 2] * per_class + [extra_label] * extra, dtype=np.uint8)
    return labels[np.random.default_rng(seed).permutation(len(labels))]


def write_mnist_like(directory, per_class_train: int = 60, per_class_test: int = 20, seed: int = 0):
    os.makedirs(directory, exist_ok=True)
    train_labels = make_labels(per_class_train, extra_label=7, extra=15, seed=seed)
    test_labels = make_labels(per_class_test, extra_label=5, extra=5, seed=seed + 1)
    paths = {
        "train_images": os.path.join(directory, "train-images-idx3-ubyte.gz"),
        "train_labels": os.path.join(directory, "train-labels-idx1-ubyte.gz"),
        "test_images": os.path.join(directory, "t10k-images-idx3-ubyte"),
        "test_labels": os.path.join(directory, "t10k-labels-idx1-ubyte"),
    }
    write_idx_file(paths["train_images"], encode_idx_images(make_digit_grids(train_labels, seed)), compress=True)
    write_idx_file(paths["train_labels"], encode_idx_labels(train_labels), compress=True)
    write_idx_file(paths["test_images"], encode_idx_images(make_digit_grids(test_labels, seed + 1)))
    write_idx_file(paths["test_labels"], encode_idx_labels(test_labels))
    return paths


@pytest.fixture
def mnist_files(tmp_path):
    return write_mnist_like(str(tmp_path / "mnist"))


@pytest.fixture
def samples():
    labels = make_labels(20, seed=3)
    pixels = preprocess_batch(make_digit_grids(labels, seed=3))
    return [Sample(pixels[i], int(labels[i]), i) for i in range(len(labels))]


@pytest.fixture
def template():
    return LayerTemplate()


@pytest.fixture
def params(template):
    return model_util.init_params(template, seed=1)


def locate_real_mnist_files():
    # skips (raises pytest.skip.Exception) unless all four files are in $QFAL_MNIST_DIR
    directory = os.environ.get(MNIST_DIR_ENV_NAME)
    if not directory:
        pytest.skip(f"set {MNIST_DIR_ENV_NAME} to run reproduction tests")
    paths = {}
    for key, name in MNIST_FILE_NAMES.items():
        for candidate in (name, name + ".gz"):
            if os.path.isfile(os.path.join(directory, candidate)):
                paths[key] = os.path.join(directory, candidate)
                break
        else:
            pytest.skip(f"{name} not found in {directory}")
    return paths


@pytest.fixture(scope="session")
def real_mnist_files():
    return locate_real_mnist_files()
