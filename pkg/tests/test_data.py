import gzip
import struct

import numpy as np
import pytest

from sparse_eoc.data import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    Dataset,
    find_mnist,
    load_idx,
    read_idx,
    synthetic_dataset,
    synthetic_split,
)
from sparse_eoc.errors import (
    BadMagicError,
    CountMismatchError,
    DomainError,
    IdxFormatError,
    ShapeError,
    TruncatedFileError,
)


def idx_bytes(magic, dims, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


def write_pair(tmp_path, n=5, rows=4, cols=3, n_labels=None, gz=False):
    g = np.random.default_rng(0)
    images = g.integers(0, 256, (n, rows, cols), dtype=np.uint8)
    labels = g.integers(0, 10, n_labels or n, dtype=np.uint8)
    img = idx_bytes(IMAGES_MAGIC, (n, rows, cols), images.tobytes())
    lab = idx_bytes(LABELS_MAGIC, (len(labels),), labels.tobytes())
    ip, lp = tmp_path / "images.idx", tmp_path / "labels.idx"
    if gz:
        img, lab = gzip.compress(img), gzip.compress(lab)
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp, images, labels


class TestIdx:
    @pytest.mark.parametrize("gz", [False, True])
    def test_round_trip(self, tmp_path, gz):
        ip, lp, images, labels = write_pair(tmp_path, gz=gz)
        ds = load_idx(ip, lp)
        assert ds.features.shape == (5, 12) and ds.n_classes == 10
        np.testing.assert_array_equal(ds.features, images.reshape(5, -1) / 255.0)
        np.testing.assert_array_equal(ds.labels, labels)
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_read_shape(self, tmp_path):
        ip, _, images, _ = write_pair(tmp_path)
        np.testing.assert_array_equal(read_idx(ip, IMAGES_MAGIC), images)

    def test_labels_as_images(self, tmp_path):
        _, lp, _, _ = write_pair(tmp_path)
        with pytest.raises(BadMagicError):
            load_idx(lp, lp)

    def test_foreign_magic(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(idx_bytes(0x00000D01, (2,), b"\0" * 8))
        with pytest.raises(BadMagicError):
            read_idx(p)

    def test_truncated_payload(self, tmp_path):
        ip, lp, _, _ = write_pair(tmp_path)
        raw = ip.read_bytes()
        ip.write_bytes(raw[:-7])
        with pytest.raises(TruncatedFileError, match=f"expected {len(raw)} bytes, got {len(raw) - 7}") as err:
            load_idx(ip, lp)
        assert err.value.expected == len(raw) and err.value.actual == len(raw) - 7

    @pytest.mark.parametrize("size", [0, 3, 9])
    def test_truncated_header(self, tmp_path, size):
        p = tmp_path / "x"
        p.write_bytes(idx_bytes(IMAGES_MAGIC, (1, 2, 2), b"\0" * 4)[:size])
        with pytest.raises(TruncatedFileError):
            read_idx(p, IMAGES_MAGIC)

    def test_trailing_bytes(self, tmp_path):
        ip, lp, _, _ = write_pair(tmp_path)
        ip.write_bytes(ip.read_bytes() + b"\0")
        with pytest.raises(IdxFormatError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp, _, _ = write_pair(tmp_path, n=5, n_labels=4)
        with pytest.raises(CountMismatchError):
            load_idx(ip, lp)

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, TruncatedFileError, CountMismatchError}
        assert len(kinds) == 3
        for k in kinds:
            assert issubclass(k, IdxFormatError) and issubclass(k, ValueError)

    def test_find(self, tmp_path):
        assert find_mnist(None) is None
        assert find_mnist(tmp_path) is None
        for name in ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte"):
            (tmp_path / name).write_bytes(b"")
        found = find_mnist(tmp_path, "train")
        assert found[0].endswith(".gz") and found[1].endswith("labels-idx1-ubyte")


class TestDataset:
    def test_validation(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros(3), np.zeros(3), 2)
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros(2), 2)
        with pytest.raises(DomainError):
            Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)

    def test_split_and_subset(self):
        ds = synthetic_dataset(3, 10, 100, seed=1)
        fit, held = ds.split(0.1, seed=0)
        assert len(fit) == 90 and len(held) == 10
        assert len(ds.subset(30)) == 30 and ds.subset(500) is ds
        with pytest.raises(DomainError):
            ds.split(1.0)


class TestSynthetic:
    def test_deterministic(self):
        a, b = synthetic_dataset(seed=3, n_samples=200), synthetic_dataset(seed=3, n_samples=200)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_range_and_balance(self):
        ds = synthetic_dataset(10, 50, 1000, seed=0)
        assert ds.features.min() == 0.0 and ds.features.max() == 1.0
        np.testing.assert_array_equal(np.bincount(ds.labels), np.full(10, 100))

    @staticmethod
    def probe_accuracy(train, test):
        # least-squares linear probe on one-hot targets
        def design(x):
            return np.hstack([x, np.ones((len(x), 1))])

        y = np.eye(train.n_classes)[train.labels]
        coef, *_ = np.linalg.lstsq(design(train.features), y, rcond=None)
        return float(np.mean(np.argmax(design(test.features) @ coef, axis=1) == test.labels))

    def test_no_separation_is_chance(self):
        train, test = synthetic_split(2000, 2000, 10, 20, separation=0.0, seed=0)
        assert abs(self.probe_accuracy(train, test) - 0.1) < 0.04

    def test_wide_separation_is_separable(self):
        train, test = synthetic_split(500, 500, 2, 20, separation=10.0, seed=0)
        assert self.probe_accuracy(train, test) > 0.98

    @pytest.mark.parametrize(
        "kw", [dict(n_classes=0), dict(separation=-1.0), dict(n_classes=5, n_features=4)]
    )
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            synthetic_dataset(**kw)
