# MNIST IDX reading, 8x8 preprocessing and IID client partitioning

import gzip
import os
import struct
from dataclasses import dataclass, field
from typing import (
    Dict,
    List,
    NamedTuple,
    Sequence,
    Tuple,
)

import numpy as np


IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
GZIP_PREFIX = b"\x1f\x8b"

RAW_SIZE = 28
CROP_BORDER = 2
POOL_SIZE = 3
IMAGE_SIZE = (RAW_SIZE - 2 * CROP_BORDER) // POOL_SIZE  # 8
NUM_PIXELS = IMAGE_SIZE * IMAGE_SIZE  # 64

DEFAULT_CLASSES = (0, 1, 2)
DEFAULT_PER_CLIENT = 300
DEFAULT_TEST_SIZE = 600


class IdxFormatError(ValueError):
    pass


class IdxLengthError(ValueError):
    pass


class PartitionError(ValueError):
    pass


class RawImage(NamedTuple):
    pixels: np.ndarray  # (28, 28) uint8
    label: int


class Sample(NamedTuple):
    pixels: np.ndarray  # (64,) float64 in [0, 1]
    label: int
    index: int = -1  # position in the source file, used as sample identity


@dataclass
class ClientDataset:
    client_id: int
    samples: List[Sample] = field(default_factory=list)

    def __post_init__(self):
        assert len(self.samples) > 0, f"client {self.client_id} has no samples / クライアント {self.client_id} のデータが空です"

    def __len__(self):
        return len(self.samples)

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return stack_samples(self.samples)

    def class_counts(self, num_classes: int = len(DEFAULT_CLASSES)) -> np.ndarray:
        return np.bincount([s.label for s in self.samples], minlength=num_classes)


def stack_samples(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        return np.zeros((0, NUM_PIXELS), dtype=np.float64), np.zeros((0,), dtype=np.int64)
    pixels = np.stack([np.asarray(s.pixels, dtype=np.float64) for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return pixels, labels


# region IDX


def _read_header(data: bytes, num_dims: int, magic: int, kind: str) -> Tuple[int, ...]:
    header_size = 4 * (1 + num_dims)
    if len(data) < 4:
        raise IdxLengthError(f"IDX {kind} stream too short for magic: {len(data)} bytes")
    (found,) = struct.unpack(">i", data[:4])
    if found != magic:
        raise IdxFormatError(f"IDX {kind} magic mismatch: expected {magic}, found {found} / IDXファイルのマジックナンバーが不正です")
    if len(data) < header_size:
        raise IdxLengthError(f"IDX {kind} header truncated: {len(data)} < {header_size} bytes")
    dims = struct.unpack(">" + "i" * num_dims, data[4:header_size])
    if any(d < 0 for d in dims):
        raise IdxFormatError(f"IDX {kind} header has negative dimension: {dims}")
    return dims


def parse_idx_images(data: bytes) -> np.ndarray:
    """
    Parses an IDX3 image stream: big-endian int32 magic (2051), count, rows, cols,
    then count*rows*cols unsigned bytes in row-major order. Returns (count, rows, cols) uint8.
    """
    count, rows, cols = _read_header(data, 3, IDX_IMAGES_MAGIC, "images")
    body = data[16:]
    expected = count * rows * cols
    if len(body) < expected:
        raise IdxLengthError(f"IDX images truncated: expected {expected} pixel bytes, found {len(body)}")
    if expected == 0:
        return np.zeros((count, rows, cols), dtype=np.uint8)
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(count, rows, cols).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    (count,) = _read_header(data, 1, IDX_LABELS_MAGIC, "labels")
    body = data[8:]
    if len(body) < count:
        raise IdxLengthError(f"IDX labels truncated: expected {count} label bytes, found {len(body)}")
    if count == 0:
        return np.zeros((0,), dtype=np.uint8)
    return np.frombuffer(body, dtype=np.uint8, count=count).copy()


def encode_idx_images(grids) -> bytes:
    grids = np.asarray(grids, dtype=np.uint8)
    assert grids.ndim == 3, f"images must be (count, rows, cols), got {grids.shape}"
    count, rows, cols = grids.shape
    return struct.pack(">iiii", IDX_IMAGES_MAGIC, count, rows, cols) + grids.tobytes(order="C")


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    return struct.pack(">ii", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


def read_idx_file(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == GZIP_PREFIX:
        data = gzip.decompress(data)

    if len(data) >= 4:
        (magic,) = struct.unpack(">i", data[:4])
        if magic == IDX_LABELS_MAGIC:
            return parse_idx_labels(data)
    return parse_idx_images(data)


def write_idx_file(path: str, data: bytes, compress: bool = False):
    if compress:
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as f:
        f.write(data)


# endregion

# region preprocessing


def preprocess(raw: RawImage) -> Sample:
    """crop 28x28 -> 24x24, 3x3 mean pooling -> 8x8, scale to [0, 1]"""
    assert raw.label in DEFAULT_CLASSES, f"label {raw.label} must be filtered out before preprocessing"
    pixels = preprocess_batch(np.asarray(raw.pixels)[None])[0]
    return Sample(pixels, int(raw.label))


def preprocess_batch(grids: np.ndarray) -> np.ndarray:
    grids = np.asarray(grids)
    assert grids.shape[1:] == (RAW_SIZE, RAW_SIZE), f"raw images must be {RAW_SIZE}x{RAW_SIZE}, got {grids.shape[1:]}"
    cropped = grids[:, CROP_BORDER : RAW_SIZE - CROP_BORDER, CROP_BORDER : RAW_SIZE - CROP_BORDER].astype(np.float64)
    pooled = cropped.reshape(-1, IMAGE_SIZE, POOL_SIZE, IMAGE_SIZE, POOL_SIZE).mean(axis=(2, 4))
    return (pooled / 255.0).reshape(-1, NUM_PIXELS)


def load_mnist_split(images_path: str, labels_path: str, classes: Sequence[int] = DEFAULT_CLASSES) -> List[Sample]:
    for path in (images_path, labels_path):
        if path is None or not os.path.isfile(path):
            raise FileNotFoundError(f"MNIST file not found / MNISTファイルが見つかりません: {path}")

    images = read_idx_file(images_path)
    labels = read_idx_file(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise IdxFormatError(f"expected an image file and a label file: {images_path}, {labels_path}")
    if images.shape[1:] != (RAW_SIZE, RAW_SIZE):
        raise IdxFormatError(f"images must be {RAW_SIZE}x{RAW_SIZE}, got {images.shape[1]}x{images.shape[2]}: {images_path}")
    if len(images) != len(labels):
        raise IdxLengthError(f"image/label count mismatch: {len(images)} images, {len(labels)} labels")

    keep = np.flatnonzero(np.isin(labels, classes))
    pixels = preprocess_batch(images[keep])
    # labels are used as class indices directly
    samples = [Sample(pixels[i], int(labels[j]), int(j)) for i, j in enumerate(keep)]
    print(f"loaded {len(samples)} samples of classes {list(classes)} from {images_path}")
    return samples


# endregion

# region partitioning


def _stratified_order(labels: np.ndarray, total: int, rng: np.random.Generator) -> np.ndarray:
    """
    Picks `total` indices so that class proportions match the pool (largest remainder),
    returned grouped by class. Within a class the order is the shuffled pool order.
    """
    pool_size = len(labels)
    order = rng.permutation(pool_size)
    classes = np.unique(labels)

    by_class: Dict[int, np.ndarray] = {int(c): order[labels[order] == c] for c in classes}
    ideal = {c: total * len(idx) / pool_size for c, idx in by_class.items()}
    takes = {c: int(np.floor(v)) for c, v in ideal.items()}
    remaining = total - sum(takes.values())
    # ties broken by class index for determinism
    for c in sorted(ideal, key=lambda c: (-(ideal[c] - takes[c]), c))[:remaining]:
        takes[c] += 1

    return np.concatenate([by_class[c][: takes[c]] for c in sorted(by_class)]) if by_class else order[:0]


def partition_iid(data: Sequence[Sample], num_clients: int, per_client: int, seed: int) -> List[ClientDataset]:
    assert num_clients >= 1 and per_client >= 1, "num_clients and per_client must be positive"
    total = num_clients * per_client
    if total > len(data):
        raise PartitionError(
            f"not enough samples: {num_clients} clients x {per_client} = {total} required, {len(data)} available (short by {total - len(data)})"
            + " / サンプル数が不足しています"
        )

    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in data], dtype=np.int64)
    chosen = _stratified_order(labels, total, rng)

    # dealing the class-grouped sequence round-robin keeps every class within +-1 per client
    clients = []
    for k in range(num_clients):
        indices = chosen[k::num_clients]
        indices = indices[rng.permutation(len(indices))]
        clients.append(ClientDataset(k, [data[i] for i in indices]))
    return clients


def select_test_samples(data: Sequence[Sample], count: int, seed: int) -> List[Sample]:
    if count is None or count >= len(data):
        return list(data)
    return partition_iid(data, 1, count, seed)[0].samples


# endregion
