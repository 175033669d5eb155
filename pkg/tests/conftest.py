"""Shared fixtures: synthetic datasets, small trained models, and the
gate for tests that need the real Fashion-MNIST files."""

import os

import numpy as np
import pytest

from wavetx.data import save_idx
from wavetx.models import build_table1_cnn, train


def synthetic_blobs(n, size=16, seed=0):
    """Two visually distinct classes: a centred square versus a wide bar.
    Deterministic in the seed; pixels lie in [0, 1]."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n).astype(np.int64)
    images = np.zeros((n, 1, size, size), dtype=np.float32)
    q = size // 4
    for i in range(n):
        base = rng.random((size, size)) * 0.2 + 0.1
        if labels[i]:
            base[q : 3 * q, q : 3 * q] += 0.55
        else:
            base[q // 2 : q + q // 2, 1 : size - 1] += 0.55
        images[i, 0] = np.clip(base, 0.0, 1.0)
    return images, labels


@pytest.fixture(scope="session")
def blob_data():
    return synthetic_blobs(400, size=16, seed=0)


@pytest.fixture(scope="session")
def blob_model(blob_data):
    """A small trained classifier over the synthetic blobs."""
    images, labels = blob_data
    model = build_table1_cnn(input_shape=(1, 16, 16), classes=2, seed=3)
    train(model, images, labels, epochs=4, lr=1e-3, batch_size=64, seed=5)
    return model


@pytest.fixture(scope="session")
def idx_root(tmp_path_factory):
    """A directory laid out like a Fashion-MNIST download, filled with
    synthetic 28x28 blobs, for loader/CLI/harness tests."""
    root = tmp_path_factory.mktemp("idxdata")
    train_images, train_labels = synthetic_blobs(600, size=28, seed=11)
    test_images, test_labels = synthetic_blobs(120, size=28, seed=12)
    save_idx(root / "train-images-idx3-ubyte",
             np.round(train_images[:, 0] * 255).astype(np.uint8))
    save_idx(root / "train-labels-idx1-ubyte", train_labels.astype(np.uint8))
    save_idx(root / "t10k-images-idx3-ubyte",
             np.round(test_images[:, 0] * 255).astype(np.uint8))
    save_idx(root / "t10k-labels-idx1-ubyte", test_labels.astype(np.uint8))
    return root


def fmnist_root():
    """Directory expected to hold the real Fashion-MNIST IDX files, or None."""
    root = os.environ.get("WAVETX_DATA_ROOT", os.path.join(os.path.dirname(__file__), "..", "data"))
    stems = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    for stem in stems:
        if not (os.path.exists(os.path.join(root, stem))
                or os.path.exists(os.path.join(root, stem + ".gz"))):
            return None
    return root


requires_fmnist = pytest.mark.skipif(
    fmnist_root() is None,
    reason="Fashion-MNIST IDX files not found; place them under ./data or set "
    "WAVETX_DATA_ROOT (this sandbox has no network access to download them)",
)
