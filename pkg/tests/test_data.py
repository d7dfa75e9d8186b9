import gzip
import struct

import numpy as np
import pytest

from qgattack import data, training
from qgattack.errors import (
    DomainError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTrailingDataError,
    IdxTruncatedError,
)
from qgattack.grad_core import ModelSpec

# two 2x2 images, assembled byte by byte
IMAGES = b"\x00\x00\x08\x03" + b"\x00\x00\x00\x02" + b"\x00\x00\x00\x02" * 2 + bytes([0, 255, 128, 64, 1, 2, 3, 4])
LABELS = b"\x00\x00\x08\x01" + b"\x00\x00\x00\x02" + bytes([7, 3])


@pytest.fixture
def idx_pair(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(IMAGES)
    lab.write_bytes(LABELS)
    return img, lab


def test_hand_built_fixture(idx_pair):
    ds = data.load_idx(*idx_pair)
    assert len(ds) == 2 and ds.image_shape == (2, 2)
    np.testing.assert_array_equal(ds.labels, [7, 3])
    np.testing.assert_array_equal(ds.images[0], np.array([0, 255, 128, 64]) / 255.0)
    assert ds.images[0, 1] == 1.0


def test_magic_for_wrong_file_kind(idx_pair):
    img, lab = idx_pair
    with pytest.raises(IdxMagicError, match="0x00000801"):
        data.load_idx(lab, lab)
    with pytest.raises(IdxMagicError, match="0x00000803"):
        data.load_idx(img, img)


def test_bad_dtype_byte(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"\x00\x00\x0d\x01\x00\x00\x00\x01" + b"\x00" * 4)
    with pytest.raises(IdxMagicError):
        data.read_idx(p)


def test_empty_file(tmp_path, idx_pair):
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(IdxTruncatedError):
        data.load_idx(empty, idx_pair[1])


@pytest.mark.parametrize("cut", [6, 12, len(IMAGES) - 1])
def test_truncated(tmp_path, idx_pair, cut):
    p = tmp_path / "short"
    p.write_bytes(IMAGES[:cut])
    with pytest.raises(IdxTruncatedError):
        data.load_idx(p, idx_pair[1])


def test_trailing_bytes(tmp_path, idx_pair):
    p = tmp_path / "long"
    p.write_bytes(IMAGES + b"\x00")
    with pytest.raises(IdxTrailingDataError):
        data.load_idx(p, idx_pair[1])


def test_count_mismatch(tmp_path, idx_pair):
    p = tmp_path / "lab3"
    p.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", 3) + bytes([1, 2, 3]))
    with pytest.raises(IdxCountMismatchError):
        data.load_idx(idx_pair[0], p)


def test_round_trip_is_byte_exact(tmp_path, idx_pair):
    ds = data.load_idx(*idx_pair)
    img, lab = tmp_path / "a", tmp_path / "b"
    data.save_idx(ds, img, lab)
    assert img.read_bytes() == IMAGES
    assert lab.read_bytes() == LABELS


def test_gzip_transparent(tmp_path, idx_pair):
    img, lab = tmp_path / "img.gz", tmp_path / "lab.gz"
    img.write_bytes(gzip.compress(IMAGES))
    lab.write_bytes(gzip.compress(LABELS))
    a = data.load_idx(img, lab)
    b = data.load_idx(*idx_pair)
    assert a.images.tobytes() == b.images.tobytes()


def test_random_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    data.write_idx(tmp_path / "r", arr)
    np.testing.assert_array_equal(data.read_idx(tmp_path / "r", 3), arr)


def test_data_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(data.DATA_DIR_ENV, str(tmp_path))
    assert data.resolve_data_path("x.idx") == tmp_path / "x.idx"
    assert data.resolve_data_path("/abs/x.idx") == data.Path("/abs/x.idx")


# --- synthetic ---


def test_synth_deterministic_and_in_range():
    a = data.synth_dataset(300, seed=4)
    b = data.synth_dataset(300, seed=4)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0
    assert a.images.shape == (300, 64)
    assert not np.array_equal(a.images, data.synth_dataset(300, seed=5).images)


def test_synth_is_learnable(blobs, standard_model):
    _, test = blobs
    assert training.accuracy(standard_model, test.images, test.labels) >= 0.95


def test_dataset_validation():
    with pytest.raises(DomainError):
        data.Dataset(np.full((2, 4), 1.5), [0, 1])
    with pytest.raises(DomainError):
        data.Dataset(np.zeros((2, 4)), [0, 12])
    with pytest.raises(DomainError):
        data.Dataset(np.zeros((2, 4)), [0])


# --- downscale ---


def test_downscale_constant_image():
    ds = data.Dataset(np.full((1, 16), 0.4), [0], image_shape=(4, 4))
    out = data.downscale(ds, 2)
    assert out.image_shape == (2, 2)
    np.testing.assert_allclose(out.images, 0.4, rtol=1e-15)


def test_downscale_checkerboard():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float).reshape(1, 16)
    out = data.downscale(data.Dataset(board, [0], image_shape=(4, 4)), 2)
    np.testing.assert_array_equal(out.images, 0.5)


def test_downscale_block_means_by_hand():
    img = np.arange(16, dtype=float).reshape(1, 16) / 15.0
    out = data.downscale(data.Dataset(img, [0], image_shape=(4, 4)), 2)
    expected = np.array([[0 + 1 + 4 + 5, 2 + 3 + 6 + 7, 8 + 9 + 12 + 13, 10 + 11 + 14 + 15]]) / 4 / 15.0
    np.testing.assert_allclose(out.images, expected, rtol=1e-14)


def test_downscale_identity_and_indivisible():
    ds = data.Dataset(np.zeros((1, 9)), [0], image_shape=(3, 3))
    assert data.downscale(ds, 1) is ds
    with pytest.raises(DomainError):
        data.downscale(ds, 2)


def test_split_is_partition():
    ds = data.synth_dataset(100, seed=0)
    train, test = data.train_test_split(ds, 0.3, seed=2)
    assert len(train) + len(test) == 100 and len(test) == 30
    rows = {r.tobytes() for r in np.vstack([train.images, test.images])}
    assert rows == {r.tobytes() for r in ds.images}
