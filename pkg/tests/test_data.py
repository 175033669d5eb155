"""Dataset IO tests: IDX parsing (plain and gzipped), the CIFAR-10 binary
layout, deterministic splits and batch iteration."""

import gzip
import struct

import numpy as np
import pytest

from wavetx.data import (
    Dataset,
    iterate_batches,
    load_cifar10,
    load_dataset,
    load_fmnist,
    load_idx,
    save_idx,
    split_dataset,
)
from wavetx.errors import FormatError, InvalidArgumentError


class TestIdx:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, (5, 7, 9)).astype(np.uint8)
        path = tmp_path / "file.idx"
        save_idx(path, arr)
        np.testing.assert_array_equal(load_idx(path), arr)

    def test_gzip_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, (4, 3, 3)).astype(np.uint8)
        plain = tmp_path / "plain.idx"
        save_idx(plain, arr)
        gz = tmp_path / "file.idx.gz"
        gz.write_bytes(gzip.compress(plain.read_bytes()))
        np.testing.assert_array_equal(load_idx(gz), arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"\x01\x00\x08\x01" + b"\x00" * 8)
        with pytest.raises(FormatError, match="magic"):
            load_idx(path)

    def test_unsupported_dtype(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">HBB", 0, 0x0D, 1) + struct.pack(">I", 0))
        with pytest.raises(FormatError, match="dtype"):
            load_idx(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(struct.pack(">HBB", 0, 0x08, 1) + struct.pack(">I", 10) + b"\x00" * 4)
        with pytest.raises(FormatError, match="shorter"):
            load_idx(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "bad"
        save_idx(path, np.zeros((2, 2), dtype=np.uint8))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_idx(path)


class TestFmnistLayout:
    def test_loads_synthetic_layout(self, idx_root):
        ds = load_fmnist(str(idx_root), "train")
        assert ds.images.shape == (600, 1, 28, 28)
        assert ds.images.dtype == np.float32
        assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0
        assert ds.labels.dtype == np.int64
        assert ds.class_count == 10
        test = load_fmnist(str(idx_root), "test")
        assert len(test) == 120

    def test_discovers_gz_files(self, tmp_path, idx_root):
        for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                     "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            raw = (idx_root / stem).read_bytes()
            (tmp_path / (stem + ".gz")).write_bytes(gzip.compress(raw))
        ds = load_dataset("fmnist", str(tmp_path), "test")
        assert len(ds) == 120

    def test_missing_file_message_names_the_stem(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="train-images-idx3-ubyte"):
            load_fmnist(str(tmp_path), "train")

    def test_label_image_count_mismatch(self, tmp_path, idx_root):
        import shutil

        for stem in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
            shutil.copy(idx_root / stem, tmp_path / stem)
        save_idx(tmp_path / "train-labels-idx1-ubyte", np.zeros(5, dtype=np.uint8))
        with pytest.raises(FormatError, match="count"):
            load_fmnist(str(tmp_path), "train")


class TestCifar10:
    def _write_batch(self, path, images, labels):
        records = np.concatenate(
            [labels[:, None].astype(np.uint8), images.reshape(len(labels), -1)], axis=1
        )
        path.write_bytes(records.tobytes())

    def test_layout_and_plane_order(self, tmp_path):
        rng = np.random.default_rng(2)
        n = 7
        images = rng.integers(0, 256, (n, 3, 32, 32)).astype(np.uint8)
        labels = rng.integers(0, 10, n).astype(np.uint8)
        for name in [f"data_batch_{i}.bin" for i in range(1, 6)]:
            self._write_batch(tmp_path / name, images, labels)
        self._write_batch(tmp_path / "test_batch.bin", images, labels)

        ds = load_cifar10(str(tmp_path), "test")
        assert ds.images.shape == (n, 3, 32, 32)
        np.testing.assert_allclose(ds.images, images.astype(np.float32) / 255.0)
        np.testing.assert_array_equal(ds.labels, labels)
        train = load_cifar10(str(tmp_path), "train")
        assert len(train) == 5 * n

    def test_subdirectory_discovery(self, tmp_path):
        sub = tmp_path / "cifar-10-batches-bin"
        sub.mkdir()
        rng = np.random.default_rng(3)
        images = rng.integers(0, 256, (2, 3, 32, 32)).astype(np.uint8)
        labels = np.array([1, 2], dtype=np.uint8)
        self._write_batch(sub / "test_batch.bin", images, labels)
        ds = load_dataset("cifar10", str(tmp_path), "test")
        assert len(ds) == 2

    def test_bad_record_size(self, tmp_path):
        (tmp_path / "test_batch.bin").write_bytes(b"\x00" * 100)
        with pytest.raises(FormatError, match="multiple"):
            load_cifar10(str(tmp_path), "test")


class TestDatasetOps:
    def _dataset(self, n=20):
        rng = np.random.default_rng(4)
        return Dataset("synthetic", rng.random((n, 1, 4, 4)).astype(np.float32),
                       rng.integers(0, 3, n).astype(np.int64), 3)

    def test_label_range_validation(self):
        with pytest.raises(FormatError):
            Dataset("bad", np.zeros((2, 1, 2, 2), np.float32),
                    np.array([0, 5], np.int64), 3)

    def test_split_is_deterministic_partition(self):
        ds = self._dataset()
        a1, b1 = split_dataset(ds, 0.75, seed=9)
        a2, b2 = split_dataset(ds, 0.75, seed=9)
        np.testing.assert_array_equal(a1.images, a2.images)
        assert len(a1) == 15 and len(b1) == 5
        merged = np.concatenate([a1.images, b1.images])
        assert merged.shape[0] == len(ds)
        # Every original row appears exactly once.
        original = {bytes(img.tobytes()) for img in ds.images}
        assert {bytes(img.tobytes()) for img in merged} == original
        with pytest.raises(InvalidArgumentError):
            split_dataset(ds, 1.0, seed=0)

    def test_iterate_batches_covers_everything_once(self):
        ds = self._dataset(10)
        seen = []
        for x, y in iterate_batches(ds.images, ds.labels, 3):
            assert x.shape[0] == y.shape[0]
            seen.extend(y.tolist())
        assert len(seen) == 10
        np.testing.assert_array_equal(seen, ds.labels)

    def test_iterate_batches_shuffles_deterministically(self):
        ds = self._dataset(16)
        a = [y for _, y in iterate_batches(ds.images, ds.labels, 4, np.random.default_rng(5))]
        b = [y for _, y in iterate_batches(ds.images, ds.labels, 4, np.random.default_rng(5))]
        np.testing.assert_array_equal(np.concatenate(a), np.concatenate(b))
        assert not np.array_equal(np.concatenate(a), ds.labels)

    def test_unknown_dataset_and_split(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            load_dataset("svhn", str(tmp_path), "test")
        with pytest.raises(InvalidArgumentError):
            load_dataset("fmnist", str(tmp_path), "validate")
