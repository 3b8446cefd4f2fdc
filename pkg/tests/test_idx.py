import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snnkit import idx
from snnkit.errors import CountMismatch, MagicMismatch, TrailingBytes, Truncated


def make_idx_bytes(kind, shape, payload):
    return struct.pack(f">BBBB{len(shape)}i", 0, 0, kind, len(shape), *shape) + payload


class TestParseIdx:
    def test_image_style_header(self):
        # header 00 00 08 03, dims like the official training-images file
        # (tiny dims here; count arithmetic is what matters)
        payload = bytes(range(2 * 3 * 4)) * 1
        arr = idx.parse_idx(make_idx_bytes(0x08, (2, 3, 4), payload))
        assert arr.shape == (2, 3, 4)
        assert arr.data.size == 24
        assert arr.data.dtype == np.uint8

    def test_training_file_count_arithmetic(self):
        # 60000 x 28 x 28 images -> 47,040,000 bytes, per the MNIST header
        assert 60000 * 28 * 28 == 47040000

    def test_label_style_header(self):
        arr = idx.parse_idx(make_idx_bytes(0x08, (10,), bytes(10)))
        assert arr.shape == (10,)

    def test_truncated_after_header(self):
        buf = make_idx_bytes(0x08, (10,), b"")
        with pytest.raises(Truncated):
            idx.parse_idx(buf)

    def test_truncated_inside_dim_list(self):
        with pytest.raises(Truncated):
            idx.parse_idx(b"\x00\x00\x08\x03\x00\x00")

    def test_trailing_bytes_rejected(self):
        buf = make_idx_bytes(0x08, (4,), bytes(5))
        with pytest.raises(TrailingBytes):
            idx.parse_idx(buf)

    def test_nonzero_magic(self):
        with pytest.raises(MagicMismatch):
            idx.parse_idx(b"\x01\x00\x08\x01\x00\x00\x00\x01\x00")

    def test_unknown_element_kind(self):
        with pytest.raises(MagicMismatch):
            idx.parse_idx(make_idx_bytes(0x05, (1,), b"\x00"))

    def test_int32_elements_big_endian(self):
        buf = make_idx_bytes(0x0C, (2,), struct.pack(">2i", -1, 300))
        arr = idx.parse_idx(buf)
        assert arr.data.tolist() == [-1, 300]


@settings(max_examples=60, deadline=None)
@given(
    shape=st.lists(st.integers(1, 6), min_size=1, max_size=3),
    seed=st.integers(0, 2**31),
)
def test_round_trip_bytes(shape, seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 256, size=shape, dtype=np.uint8)
    buf = make_idx_bytes(0x08, tuple(shape), data.tobytes())
    assert idx.serialize_idx(idx.parse_idx(buf)) == buf


def test_gzip_round_trip(tmp_path):
    data = np.arange(12, dtype=np.uint8).reshape(3, 4)
    arr = idx.IdxArray(0x08, (3, 4), data)
    path = tmp_path / "x.idx.gz"
    idx.save_idx(arr, path)
    with gzip.open(path, "rb") as f:
        assert f.read() == idx.serialize_idx(arr)
    back = idx.load_idx(path)
    assert np.array_equal(back.data, data)


class TestLoadMnist:
    def _write_pair(self, tmp_path, n_images, n_labels):
        imgs = np.zeros((n_images, 28, 28), dtype=np.uint8)
        labs = np.zeros(n_labels, dtype=np.uint8)
        ip, lp = tmp_path / "imgs", tmp_path / "labs"
        idx.save_idx(idx.IdxArray(0x08, imgs.shape, imgs), ip)
        idx.save_idx(idx.IdxArray(0x08, labs.shape, labs), lp)
        return ip, lp

    def test_pair_zipped(self, tmp_path):
        ip, lp = self._write_pair(tmp_path, 5, 5)
        ds = idx.load_mnist(ip, lp, "unit")
        assert len(ds) == 5
        assert ds.images.shape == (5, 28, 28)

    def test_count_mismatch(self, tmp_path):
        ip, lp = self._write_pair(tmp_path, 5, 4)
        with pytest.raises(CountMismatch):
            idx.load_mnist(ip, lp)

    def test_official_counts(self, mnist):
        train, test = mnist
        assert len(train) == 60000
        assert len(test) == 10000
        assert set(np.unique(train.labels)) == set(range(10))
        assert set(np.unique(test.labels)) == set(range(10))


class TestNormalize:
    def test_endpoints_and_exact_fifth(self):
        assert idx.normalize(np.array([0]))[0] == 0.0
        assert idx.normalize(np.array([255]))[0] == 1.0
        assert idx.normalize(np.array([51]))[0] == pytest.approx(0.2)

    @given(st.lists(st.integers(0, 255), min_size=1, max_size=64))
    def test_range_and_monotone(self, values):
        out = idx.normalize(np.array(values, dtype=np.uint8))
        assert np.all((out >= 0) & (out <= 1))
        v = np.array(values)
        order = np.argsort(v)
        assert np.all(np.diff(out[order]) >= 0)
