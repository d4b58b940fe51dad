import numpy as np
import pytest

from latent.augment import AugmentParams, augment, augment_dataset, hflip, shift_image
from latent.datasets import (
    TOY_SETS,
    make_bars,
    make_digits,
    read_image_csv,
    read_table_csv,
    read_tensor,
    write_image_csv,
    write_tensor,
    write_toy_datasets,
)
from conftest import DATA


def test_shift_zero_fill():
    img = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(shift_image(img, 1, 0), [[0, 0, 1], [0, 3, 4], [0, 6, 7]])
    assert np.array_equal(shift_image(img, 0, -1), [[3, 4, 5], [6, 7, 8], [0, 0, 0]])
    assert not shift_image(img, 3, 0).any()


def test_identity_params_copy_input():
    img = np.random.default_rng(0).uniform(size=(8, 8))
    out = augment(img, AugmentParams(), np.random.default_rng(0))
    assert np.array_equal(out, img) and out is not img


def test_augment_bounds_and_determinism():
    params = AugmentParams(shift_x=0.25, shift_y=0.25, rotation=15, horizontal_flip=True, seed=3)
    images = np.random.default_rng(0).uniform(size=(5, 8, 8))
    labels = np.arange(5)
    a, la = augment_dataset(images, labels, params, 2)
    b, _ = augment_dataset(images, labels, params, 2)
    assert a.shape == (15, 8, 8) and np.array_equal(la, np.tile(labels, 3))
    assert np.array_equal(a, b)
    assert np.array_equal(a[:5], images)
    assert np.array_equal(hflip(hflip(images[0])), images[0])
    with pytest.raises(ValueError):
        AugmentParams(rotation=90)
    with pytest.raises(ValueError):
        AugmentParams(shift_x=0.7)


def test_generators_are_deterministic():
    x1, y1 = make_bars(20, 1)
    x2, y2 = make_bars(20, 1)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    x, y = make_digits(50, 2)
    assert x.shape == (50, 8, 8) and set(y) <= set(range(10))
    assert x.min() >= 0 and x.max() <= 1


def test_shipped_toy_data_matches_generator(tmp_path):
    write_toy_datasets(tmp_path)
    for name, (_, n_train, n_test, _) in TOY_SETS.items():
        for part, n in (("train", n_train), ("test", n_test)):
            fresh = (tmp_path / f"{name}_{part}.csv").read_bytes()
            assert fresh == (DATA / f"{name}_{part}.csv").read_bytes()
            x, y = read_image_csv(DATA / f"{name}_{part}.csv", (8, 8, 1))
            assert x.shape == (n, 8, 8, 1)


def test_image_csv_round_trip(tmp_path):
    x, y = make_bars(4, 0)
    write_image_csv(tmp_path / "a.csv", x, y)
    x2, y2 = read_image_csv(tmp_path / "a.csv", (8, 8))
    assert np.allclose(x, x2, atol=1e-6) and np.array_equal(y, y2)
    with pytest.raises(ValueError):
        read_image_csv(tmp_path / "a.csv", (7, 7))


def test_table_csv_label_by_index(tmp_path):
    (tmp_path / "t.csv").write_text("a,b,c\n1,2,0\n3,4,1\n")
    values, labels = read_table_csv(tmp_path / "t.csv", 2)
    assert values.tolist() == [[1, 2], [3, 4]] and labels.tolist() == [0, 1]
    with pytest.raises(ValueError):
        read_table_csv(tmp_path / "t.csv", "label")


def test_tensor_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(2, 3, 4)).astype(np.float32)
    write_tensor(tmp_path / "t.bin", arr)
    assert (tmp_path / "t.bin").read_bytes()[:4] == b"LTTN"
    assert np.array_equal(read_tensor(tmp_path / "t.bin"), arr)
    (tmp_path / "bad.bin").write_bytes(b"LTTN" + (tmp_path / "t.bin").read_bytes()[4:-1])
    with pytest.raises(ValueError):
        read_tensor(tmp_path / "bad.bin")
