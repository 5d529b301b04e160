import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirvae import data
from dirvae.evaluation import knn_classify


def _crafted_2x2():
    return struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([0, 128, 255, 0])


def test_crafted_idx_image():
    img = data.parse_idx_images(_crafted_2x2())
    assert (img.n, img.rows, img.cols) == (1, 2, 2)
    np.testing.assert_array_equal(img.pixels[0], [0.0, 128 / 255, 1.0, 0.0])


def test_labels_parse():
    blob = struct.pack(">II", 0x801, 3) + bytes([7, 0, 9])
    np.testing.assert_array_equal(data.parse_idx_labels(blob), [7, 0, 9])


def test_round_trip_random_images_bit_exact():
    raw = np.random.default_rng(0).integers(0, 256, size=(3, 28 * 28), dtype=np.uint8)
    blob = struct.pack(">IIII", 0x803, 3, 28, 28) + raw.tobytes()
    img = data.parse_idx_images(blob)
    assert data.serialize_idx_images(img.pixels, 28, 28) == blob
    labels = np.array([1, 2, 3])
    assert data.serialize_idx_labels(data.parse_idx_labels(data.serialize_idx_labels(labels))) == data.serialize_idx_labels(labels)


def test_wrong_magic_names_both_values():
    with pytest.raises(data.IdxMagicError, match="0x00000803.*0x00000801"):
        data.parse_idx_images(struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4))


@pytest.mark.parametrize("cut", [0, 3, 10, 17])
def test_truncation(cut):
    with pytest.raises(data.IdxTruncatedError):
        data.parse_idx_images(_crafted_2x2()[:cut])


def test_dimension_overflow():
    with pytest.raises(data.IdxDimensionError):
        data.parse_idx_images(struct.pack(">IIII", 0x803, 2**20, 2**10, 2**10))


def test_error_categories_distinct():
    cats = {e.category for e in (data.IdxMagicError, data.IdxTruncatedError, data.IdxDimensionError)}
    assert len(cats) == 3


def test_parser_ignores_bytes_past_payload():
    img = data.parse_idx_images(_crafted_2x2() + b"\xff" * 5)
    assert img.pixels.shape == (1, 4)


def test_binarize_rules():
    assert data.binarize(np.array([0.5]))[0] == 0.0
    np.testing.assert_array_equal(data.binarize(np.zeros((2, 3))), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        data.binarize(np.array([1.5]))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_binarize_idempotent(values):
    b = data.binarize(np.array(values))
    np.testing.assert_array_equal(data.binarize(b), b)
    assert set(np.unique(b)) <= {0.0, 1.0}


def _ten_class(n=3000, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.choice(10, size=n, p=np.linspace(1, 2, 10) / np.linspace(1, 2, 10).sum())
    return data.Dataset(np.arange(n, dtype=float)[:, None], labels, 10)


def test_split_deterministic_and_disjoint():
    ds = _ten_class()
    a = data.make_split(ds, (1000, 200, 500), 4)
    b = data.make_split(ds, (1000, 200, 500), 4)
    ids = [p.images[:, 0] for p in a]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.images, y.images)
    assert [len(p) for p in a] == [1000, 200, 500]
    assert len(np.unique(np.concatenate(ids))) == 1700


def test_split_full_train_is_permutation():
    ds = _ten_class(500)
    train, valid, test = data.make_split(ds, (500, 0, 0), 1)
    assert len(valid) == len(test) == 0
    np.testing.assert_array_equal(np.sort(train.images[:, 0]), np.arange(500))


def test_split_stratified_within_two_points():
    ds = _ten_class()
    full = np.bincount(ds.labels, minlength=10) / len(ds)
    for part in data.make_split(ds, (1000, 200, 500), 7):
        share = np.bincount(part.labels, minlength=10) / len(part)
        assert np.max(np.abs(share - full)) <= 0.02


def test_split_too_large():
    with pytest.raises(ValueError):
        data.make_split(_ten_class(100), (80, 20, 1), 0)


def test_bars_properties():
    ds = data.synthetic_bars(200, 4, np.random.default_rng(3))
    assert ds.n_classes == 8 and ds.images.shape == (200, 16)
    np.testing.assert_array_equal(ds.images.sum(axis=1), 4)
    again = data.synthetic_bars(200, 4, np.random.default_rng(3))
    np.testing.assert_array_equal(ds.images, again.images)
    with pytest.raises(ValueError):
        data.synthetic_bars(3, 1, np.random.default_rng(0))


def test_bars_raw_knn_is_perfect():
    rng = np.random.default_rng(0)
    tr_set, te_set = data.synthetic_bars(300, 5, rng), data.synthetic_bars(100, 5, rng)
    assert knn_classify(tr_set.images, tr_set.labels, te_set.images, te_set.labels, 1) == 0.0


def test_dataset_cache_round_trip(tmp_path):
    ds = data.synthetic_bars(20, 3, np.random.default_rng(0))
    data.save_dataset(tmp_path / "d.bin", ds)
    back = data.load_dataset(tmp_path / "d.bin")
    assert back.images.tobytes() == ds.images.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.meta == ds.meta


def test_missing_mnist(tmp_path):
    with pytest.raises(data.DatasetMissingError):
        data.load_mnist(tmp_path)


def test_bundled_mnist_loads():
    ds = data.load_mnist()
    assert ds.images.shape[1] == 784 and len(ds) >= 6500
    assert set(np.unique(ds.images)) <= {0.0, 1.0}
    assert set(np.unique(ds.labels)) == set(range(10))
