"""IDX parsing, binarization, stratified splits and the synthetic bars dataset."""

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
DATA_ROOT_ENV = "DIRVAE_DATA"
MAX_IDX_ELEMENTS = 2**31

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
DESK_SIZES = (5000, 500, 1000)
FULL_SIZES = (45000, 5000, 10000)


class IdxError(ValueError):
    category = "idx"


class IdxMagicError(IdxError):
    category = "idx-bad-magic"


class IdxTruncatedError(IdxError):
    category = "idx-truncated"


class IdxDimensionError(IdxError):
    category = "idx-dimension-overflow"


class DatasetMissingError(FileNotFoundError):
    category = "data-missing"


@dataclass
class IdxImages:
    n: int
    rows: int
    cols: int
    pixels: np.ndarray  # (n, rows * cols) in [0, 1]


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.n_classes, dict(self.meta))


def _idx_header(data, magic, ndim):
    head = 4 + 4 * ndim
    if len(data) < head:
        raise IdxTruncatedError(f"IDX header needs {head} bytes, got {len(data)}")
    (found,) = struct.unpack_from(">I", data, 0)
    if found != magic:
        raise IdxMagicError(f"bad IDX magic: expected 0x{magic:08x}, got 0x{found:08x}")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = 1
    for d in dims:
        count *= d
    if count > MAX_IDX_ELEMENTS:
        raise IdxDimensionError(f"IDX dimensions {dims} describe {count} elements")
    if len(data) < head + count:
        raise IdxTruncatedError(f"IDX payload has {len(data) - head} bytes, header declares {count}")
    return dims, head, count


def parse_idx_images(data):
    (n, rows, cols), head, count = _idx_header(data, IMAGES_MAGIC, 3)
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=head)
    return IdxImages(n, rows, cols, raw.reshape(n, rows * cols) / 255.0)


def parse_idx_labels(data):
    (n,), head, count = _idx_header(data, LABELS_MAGIC, 1)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=head).astype(np.int64)


def serialize_idx_images(pixels, rows, cols):
    """Inverse of :func:`parse_idx_images` for pixels that are multiples of 1/255."""
    raw = np.rint(np.asarray(pixels, dtype=np.float64) * 255.0).astype(np.uint8)
    n = raw.shape[0]
    return struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + raw.reshape(n, rows * cols).tobytes()


def serialize_idx_labels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes()


def binarize(pixels, threshold=0.5):
    """1.0 where pixel > threshold, else 0.0."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("binarize expects values in [0, 1]")
    return (x > threshold).astype(np.float64)


def make_split(dataset, sizes, seed):
    """Stratified, seed-deterministic (train, valid, test) split.

    Each class is shuffled and dealt to the splits in proportion to their
    sizes (largest-remainder rounding), so per-class shares track the full
    set.
    """
    sizes = tuple(int(s) for s in sizes)
    n = len(dataset)
    if min(sizes) < 0 or sum(sizes) > n:
        raise ValueError(f"split sizes {sizes} exceed dataset size {n}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    classes = np.unique(labels)
    per_class = {c: rng.permutation(np.flatnonzero(labels == c)) for c in classes}
    counts = np.array([per_class[c].size for c in classes])
    parts = []
    used = np.zeros(len(classes), dtype=np.int64)
    for size in sizes:
        quota = _apportion(size, counts - used, counts / n)
        idx = []
        for j, c in enumerate(classes):
            idx.append(per_class[c][used[j] : used[j] + quota[j]])
        used += quota
        chosen = np.concatenate(idx) if idx else np.array([], dtype=np.int64)
        parts.append(rng.permutation(chosen))
    return tuple(dataset.subset(p) for p in parts)


def _apportion(total, available, shares):
    raw = total * shares
    quota = np.minimum(np.floor(raw).astype(np.int64), available)
    remainder = raw - quota
    while quota.sum() < total:
        open_ = quota < available
        j = int(np.argmax(np.where(open_, remainder, -np.inf)))
        quota[j] += 1
        remainder[j] = -np.inf if quota[j] >= available[j] else remainder[j] - 1.0
    return quota


def synthetic_bars(n, side, rng):
    """n images of one horizontal or vertical bar on a side x side grid.

    Labels 0..side-1 are rows, side..2*side-1 are columns.
    """
    if side < 2:
        raise ValueError("side must be >= 2")
    labels = rng.integers(0, 2 * side, size=n)
    images = np.zeros((n, side, side))
    for i, lab in enumerate(labels):
        if lab < side:
            images[i, lab, :] = 1.0
        else:
            images[i, :, lab - side] = 1.0
    return Dataset(images.reshape(n, side * side), labels, 2 * side, {"name": "bars", "side": side})


def data_root(root=None):
    root = root or os.environ.get(DATA_ROOT_ENV)
    if root:
        return Path(root)
    return Path(__file__).resolve().parents[2] / "data"


def _read_maybe_gz(path):
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            raw = candidate.read_bytes()
            return gzip.decompress(raw) if candidate.suffix == ".gz" else raw
    raise DatasetMissingError(f"missing IDX file {path}[.gz]")


def load_mnist(root=None, threshold=0.5):
    """All MNIST images found under ``<root>/mnist``, binarized, train then test files."""
    base = data_root(root) / "mnist"
    images, labels = [], []
    for part in ("train", "test"):
        img_path = base / MNIST_FILES[f"{part}_images"]
        try:
            img = parse_idx_images(_read_maybe_gz(img_path))
        except DatasetMissingError:
            if part == "test":
                continue
            raise
        lab = parse_idx_labels(_read_maybe_gz(base / MNIST_FILES[f"{part}_labels"]))
        images.append(binarize(img.pixels, threshold))
        labels.append(lab)
    return Dataset(np.concatenate(images), np.concatenate(labels), 10, {"name": "mnist", "side": 28})


def save_dataset(path, dataset):
    header = {"kind": "dataset", "n_classes": dataset.n_classes, "meta": dataset.meta}
    container.save(path, header, {"images": dataset.images, "labels": dataset.labels.astype(np.float64)})


def load_dataset(path):
    header, tensors = container.load(path)
    if header.get("kind") != "dataset":
        raise container.ContainerError(f"{path}: not a dataset container")
    return Dataset(tensors["images"], tensors["labels"].astype(np.int64), header["n_classes"], header["meta"])
