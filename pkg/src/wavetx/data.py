"""Dataset loading: IDX image/label files (Fashion-MNIST layout) and the
CIFAR-10 binary batches. Pixels come out as float32 in [0, 1], NCHW."""

import dataclasses
import gzip
import os
import struct

import numpy as np

from .errors import FormatError, InvalidArgumentError

IDX_UNSIGNED_BYTE = 0x08

FMNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

CIFAR10_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}

CIFAR10_RECORD = 1 + 3 * 32 * 32


@dataclasses.dataclass
class Dataset:
    name: str
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise FormatError("dataset images and labels are inconsistent")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise FormatError("dataset labels fall outside the class range")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, index):
        return Dataset(self.name, self.images[index], self.labels[index], self.class_count)


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(path):
    """Parse one IDX file (optionally gzipped) into an ndarray."""
    with _open_maybe_gzip(path) as f:
        header = f.read(4)
        if len(header) != 4:
            raise FormatError(f"{path}: truncated IDX header")
        zero, dtype_code, ndim = struct.unpack(">HBB", header)
        if zero != 0:
            raise FormatError(f"{path}: bad IDX magic")
        if dtype_code != IDX_UNSIGNED_BYTE:
            raise FormatError(f"{path}: unsupported IDX dtype 0x{dtype_code:02x}")
        dims_raw = f.read(4 * ndim)
        if len(dims_raw) != 4 * ndim:
            raise FormatError(f"{path}: truncated IDX dimensions")
        dims = struct.unpack(f">{ndim}I", dims_raw)
        count = int(np.prod(dims, dtype=np.int64)) if dims else 0
        payload = f.read(count)
        if len(payload) != count:
            raise FormatError(f"{path}: IDX payload is shorter than its header claims")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after IDX payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def save_idx(path, array):
    """Write a uint8 array as an IDX file (the inverse of load_idx)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">HBB", 0, IDX_UNSIGNED_BYTE, arr.ndim))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def _find_idx_file(root, stem):
    for candidate in (stem, stem + ".gz"):
        path = os.path.join(root, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"missing dataset file {stem}[.gz] under {root}")


def load_fmnist(root, split):
    image_stem, label_stem = FMNIST_FILES[split]
    images = load_idx(_find_idx_file(root, image_stem))
    labels = load_idx(_find_idx_file(root, label_stem))
    if images.ndim != 3:
        raise FormatError("image IDX file must have three dimensions")
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise FormatError("label IDX file does not match the image count")
    x = (images.astype(np.float32) / 255.0)[:, None, :, :]
    return Dataset("fmnist", x, labels.astype(np.int64), 10)


def load_cifar10(root, split):
    images, labels = [], []
    for filename in CIFAR10_FILES[split]:
        path = os.path.join(root, filename)
        if not os.path.exists(path):
            alt = os.path.join(root, "cifar-10-batches-bin", filename)
            if os.path.exists(alt):
                path = alt
            else:
                raise FileNotFoundError(f"missing dataset file {filename} under {root}")
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR10_RECORD != 0:
            raise FormatError(f"{path}: size is not a multiple of {CIFAR10_RECORD}")
        records = raw.reshape(-1, CIFAR10_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    x = np.concatenate(images).astype(np.float32) / 255.0
    return Dataset("cifar10", x, np.concatenate(labels), 10)


_LOADERS = {"fmnist": load_fmnist, "cifar10": load_cifar10}


def load_dataset(name, root, split):
    """Load a named dataset split ("train" or "test") from ``root``."""
    if name not in _LOADERS:
        raise InvalidArgumentError(f"unknown dataset {name!r}; expected one of {sorted(_LOADERS)}")
    if split not in ("train", "test"):
        raise InvalidArgumentError(f"unknown split {split!r}")
    return _LOADERS[name](root, split)


def split_dataset(dataset, fraction, seed):
    """Deterministic shuffled split into (first, second) parts; ``fraction``
    is the share of the first part."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(fraction * len(dataset)))
    return dataset.subset(order[:cut]), dataset.subset(order[cut:])


def iterate_batches(images, labels, batch_size, rng=None):
    """Yield (images, labels) minibatches; shuffled when an rng is given."""
    if batch_size < 1:
        raise InvalidArgumentError("batch_size must be positive")
    n = images.shape[0]
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield images[idx], labels[idx]
