import gzip
import struct

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alterfactual.data import (
    DatasetUnavailableError,
    LabeledImageSet,
    PreprocessSpec,
    load_binary_subset,
    preprocess,
    preprocess_batch,
    read_idx,
    write_idx,
)
from conftest import requires_fashion, requires_mnist


def bilinear_oracle(img, out_size):
    """Half-pixel-centre bilinear resampling, written out pixel by pixel."""
    h, w = img.shape
    out = np.empty((out_size, out_size))

    def coord(i, n_in):
        src = (i + 0.5) * n_in / out_size - 0.5
        src = max(src, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    for r in range(out_size):
        r0, r1, fr = coord(r, h)
        for c in range(out_size):
            c0, c1, fc = coord(c, w)
            top = img[r0, c0] * (1 - fc) + img[r0, c1] * fc
            bottom = img[r1, c0] * (1 - fc) + img[r1, c1] * fc
            out[r, c] = top * (1 - fr) + bottom * fr
    return out


# -- IDX ----------------------------------------------------------------------

def test_idx_round_trip_and_magic(tmp_path):
    images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    labels = np.array([0, 1], dtype=np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(tmp_path / "lbl", labels)
    assert struct.unpack(">I", (tmp_path / "img").read_bytes()[:4])[0] == 0x00000803
    assert struct.unpack(">I", (tmp_path / "lbl").read_bytes()[:4])[0] == 0x00000801
    np.testing.assert_array_equal(read_idx(tmp_path / "img"), images)
    np.testing.assert_array_equal(read_idx(tmp_path / "lbl"), labels)


def test_idx_reads_gzip(tmp_path):
    write_idx(tmp_path / "raw", np.ones((2, 2), np.uint8))
    (tmp_path / "raw.gz").write_bytes(gzip.compress((tmp_path / "raw").read_bytes()))
    np.testing.assert_array_equal(read_idx(tmp_path / "raw.gz"), np.ones((2, 2)))


def test_idx_truncated_file_rejected(tmp_path):
    write_idx(tmp_path / "f", np.ones((4, 4), np.uint8))
    (tmp_path / "f").write_bytes((tmp_path / "f").read_bytes()[:-3])
    with pytest.raises(ValueError):
        read_idx(tmp_path / "f")


# -- preprocessing ----------------------------------------------------------

def test_constant_images_map_to_range_endpoints():
    lo = preprocess(np.zeros((28, 28), np.uint8))
    hi = preprocess(np.full((28, 28), 255, np.uint8))
    assert lo.shape == hi.shape == (128, 128, 1)
    assert (lo == -1.0).all() and (hi == 1.0).all()


def test_checkerboard_matches_independent_bilinear():
    board = ((np.indices((28, 28)).sum(axis=0) % 2) * 255).astype(np.uint8)
    ours = preprocess(board, PreprocessSpec(128, "bilinear"))[..., 0]
    ref = bilinear_oracle(board.astype(np.float64) / 127.5 - 1.0, 128)
    assert np.abs(ours - ref).max() <= 1e-6


@settings(max_examples=10, deadline=None)
@given(arrays(np.uint8, (28, 28)))
def test_bilinear_matches_oracle_on_random_images(img):
    ours = preprocess(img)[..., 0]
    ref = bilinear_oracle(img.astype(np.float64) / 127.5 - 1.0, 128)
    assert np.abs(ours - ref).max() <= 1e-5


def test_preprocess_idempotent_at_target_resolution():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (128, 128), dtype=np.uint8)
    out = preprocess(img)[..., 0]
    np.testing.assert_allclose(out, img / 127.5 - 1.0, atol=1e-6)


def test_preprocess_rejects_bad_input():
    with pytest.raises(ValueError):
        preprocess(np.zeros((28, 30), np.uint8))
    with pytest.raises(ValueError):
        preprocess(np.zeros((0, 0), np.uint8))
    with pytest.raises(ValueError):
        preprocess(np.full((4, 4), 300))


@pytest.mark.parametrize("res", [100, 64, 0])
def test_preprocess_spec_requires_power_of_two_reaching_bottleneck(res):
    with pytest.raises(ValueError):
        PreprocessSpec(res)


def test_nearest_filter():
    img = np.array([[0, 255], [255, 0]], np.uint8)
    out = preprocess_batch(img[None], PreprocessSpec(128, "nearest"))[0, ..., 0]
    assert set(np.unique(out)) == {-1.0, 1.0}
    assert out[0, 0] == -1.0 and out[0, 127] == 1.0


# -- LabeledImageSet --------------------------------------------------------

def test_labeled_image_set_invariants():
    ok = np.zeros((2, 4, 4, 1), np.float32)
    LabeledImageSet(ok, np.array([0, 1]), "train", ("a", "b"))
    with pytest.raises(ValueError):
        LabeledImageSet(ok, np.array([0]), "train", ("a", "b"))
    with pytest.raises(ValueError):
        LabeledImageSet(ok, np.array([0, 2]), "train", ("a", "b"))
    with pytest.raises(ValueError):
        LabeledImageSet(ok + 1.5, np.array([0, 1]), "train", ("a", "b"))
    with pytest.raises(ValueError):
        LabeledImageSet(ok, np.array([0, 1]), "val", ("a", "b"))


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.integers(0, 9), min_size=2, max_size=2, unique=True))
def test_binary_subset_maps_classes(fake_cache, pair):
    a, b = pair
    ds = load_binary_subset("mnist", a, b, "train", cache_dir=fake_cache, spec=None, download=False)
    assert len(ds) == 10
    assert ds.class_names == (str(a), str(b))
    # fake class k is filled with 20*k + noise in [0, 20)
    means = (ds.images[..., 0] + 1) * 127.5
    assert np.all((means.mean(axis=(1, 2)) // 20) == np.where(ds.labels == 0, a, b))


def test_binary_subset_by_name_and_preprocessed(fake_cache):
    ds = load_binary_subset("fashion_mnist", "ankle_boot", "sneaker", "test", cache_dir=fake_cache, download=False)
    assert ds.shape == (128, 128, 1)
    assert ds.class_names == ("ankle_boot", "sneaker")
    assert ds.images.min() >= -1 and ds.images.max() <= 1


def test_binary_subset_errors(fake_cache, tmp_path):
    with pytest.raises(ValueError):
        load_binary_subset("fashion_mnist", "ankle_boot", "ankle_boot", "train", cache_dir=fake_cache)
    with pytest.raises(ValueError):
        load_binary_subset("fashion_mnist", "ankle_boot", "flip_flop", "train", cache_dir=fake_cache)
    with pytest.raises(ValueError):
        load_binary_subset("mnist", 3, 10, "train", cache_dir=fake_cache)
    with pytest.raises(ValueError):
        load_binary_subset("cifar", 3, 8, "train", cache_dir=fake_cache)
    with pytest.raises(DatasetUnavailableError):
        load_binary_subset("mnist", 3, 8, "train", cache_dir=tmp_path / "empty", download=False)


def test_loading_is_deterministic(fake_cache):
    a = load_binary_subset("mnist", 3, 8, "train", cache_dir=fake_cache, download=False)
    b = load_binary_subset("mnist", 3, 8, "train", cache_dir=fake_cache, download=False)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_custom_dir_layout(tmp_path):
    from PIL import Image

    for split in ("train", "test"):
        for cls, value in (("masked", 10), ("unmasked", 240)):
            d = tmp_path / split / cls
            d.mkdir(parents=True)
            for i in range(3):
                Image.fromarray(np.full((32, 32), value, np.uint8)).save(d / f"{i}.png")
    ds = load_binary_subset("custom_dir", "masked", "unmasked", "train", cache_dir=tmp_path)
    assert len(ds) == 6 and ds.shape == (128, 128, 1)
    assert ds.class_counts() == {"masked": 3, "unmasked": 3}
    np.testing.assert_allclose(ds.images[ds.labels == 1], 240 / 127.5 - 1, atol=1e-6)


def test_to_tensor_layout():
    imgs = np.random.default_rng(0).uniform(-1, 1, (2, 4, 4, 1)).astype(np.float32)
    t = LabeledImageSet(imgs, np.array([0, 1]), "train", ("a", "b")).to_tensor()
    assert t.shape == (2, 1, 4, 4)
    assert torch.equal(t[1, 0], torch.from_numpy(imgs[1, ..., 0]))


# -- real datasets (skipped when the cache is empty) -------------------------

@requires_fashion
@pytest.mark.parametrize("split,total", [("train", 12000), ("test", 2000)])
def test_fashion_split_sizes(split, total):
    ds = load_binary_subset("fashion_mnist", "ankle_boot", "sneaker", split, spec=None, download=False)
    assert len(ds) == total
    assert ds.class_counts() == {"ankle_boot": total // 2, "sneaker": total // 2}


@requires_mnist
def test_mnist_three_vs_eight_counts_reported():
    ds = load_binary_subset("mnist", 3, 8, "test", spec=None, download=False)
    counts = ds.class_counts()
    assert sum(counts.values()) == len(ds) == 1984
    assert counts == {"3": 1010, "8": 974}
