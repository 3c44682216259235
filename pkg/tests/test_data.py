import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import requires_mnist
from tradeoff_lab.data import (AugmentationPolicy, IdxCountMismatchError, IdxMagicError, IdxParseError,
                               IdxTruncatedError, LabeledDataset, load_mnist, load_mnist_idx, random_rotation_augment,
                               rotate_image, rotate_images, sample_angles, subset, write_idx_images, write_idx_labels)
from tradeoff_lab.groupconv import rot90_plane


@pytest.fixture
def idx_pair(tmp_path):
    images = np.zeros((2, 28, 28), dtype=np.uint8)
    images[0] = 255
    images[1, 5, 7] = 51
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx_images(img, images)
    write_idx_labels(lab, [3, 9])
    return img, lab


def test_idx_fixture_shapes_and_scaling(idx_pair):
    ds = load_mnist_idx(*idx_pair)
    assert ds.images.shape == (2, 1, 28, 28) and ds.labels.shape == (2,)
    assert np.all(ds.images[0] == 1.0)
    assert ds.images[1, 0, 5, 7] == 51 / 255 and ds.images[1].sum() == 51 / 255
    np.testing.assert_array_equal(ds.labels, [3, 9])


def test_idx_header_is_big_endian(idx_pair):
    raw = idx_pair[0].read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (0x00000803, 2, 28, 28)
    assert struct.unpack(">II", idx_pair[1].read_bytes()[:8]) == (0x00000801, 2)


def test_idx_gzip_round_trip(tmp_path):
    img, lab = tmp_path / "i.gz", tmp_path / "l.gz"
    write_idx_images(img, np.full((3, 28, 28), 7, dtype=np.uint8))
    write_idx_labels(lab, [0, 1, 2])
    assert img.read_bytes()[:2] == b"\x1f\x8b"
    assert gzip.decompress(img.read_bytes())[:4] == b"\x00\x00\x08\x03"
    ds = load_mnist_idx(img, lab)
    assert len(ds) == 3 and np.all(ds.images == 7 / 255)


def test_idx_wrong_magic(idx_pair):
    img, lab = idx_pair
    with pytest.raises(IdxMagicError, match="0x00000803"):
        load_mnist_idx(lab, lab)


def test_idx_truncated(idx_pair, tmp_path):
    img, lab = idx_pair
    short = tmp_path / "short.idx"
    short.write_bytes(img.read_bytes()[:-10])
    with pytest.raises(IdxTruncatedError):
        load_mnist_idx(short, lab)
    short.write_bytes(img.read_bytes()[:2])
    with pytest.raises(IdxTruncatedError):
        load_mnist_idx(short, lab)


def test_idx_count_mismatch(idx_pair, tmp_path):
    img, _ = idx_pair
    lab = tmp_path / "lab3.idx"
    write_idx_labels(lab, [1, 2, 3])
    with pytest.raises(IdxCountMismatchError):
        load_mnist_idx(img, lab)
    assert issubclass(IdxCountMismatchError, IdxParseError)


# rotation ------------------------------------------------------------------


def test_rotation_zero_is_identity():
    x = np.random.default_rng(0).uniform(0, 1, (1, 28, 28))
    np.testing.assert_array_equal(rotate_image(x, 0.0), x)


def test_rotation_180_flips_both_axes():
    x = np.random.default_rng(1).uniform(0, 1, (1, 28, 28))
    np.testing.assert_array_equal(rotate_image(x, 180.0), x[:, ::-1, ::-1])
    np.testing.assert_array_equal(rotate_image(x, -180.0), x[:, ::-1, ::-1])


def test_rotation_90_is_exact_permutation():
    x = np.random.default_rng(2).uniform(0, 1, (1, 28, 28))
    np.testing.assert_array_equal(rotate_image(x, 90.0), rot90_plane(x, 1))
    np.testing.assert_array_equal(rotate_image(x, -90.0), rot90_plane(x, 3))
    # the inverse map of grid point (r, c) under +90 is (c, 27 - r): always a grid point
    r, c = np.mgrid[0:28, 0:28]
    src_r, src_c = c, 27 - r
    np.testing.assert_array_equal(rotate_image(x, 90.0)[0], x[0][src_r, src_c])


def test_rotation_is_counter_clockwise():
    x = np.zeros((1, 5, 5))
    x[0, 2, 4] = 1.0  # right of center
    out = rotate_image(x, 90.0)
    assert out[0, 0, 2] == 1.0  # now above center


def test_rotation_small_angle_bilinear_value():
    # a single bright pixel one step right of center, rotated by 45 degrees,
    # lands between grid points; total mass near the target is spread bilinearly
    x = np.zeros((1, 5, 5))
    x[0, 2, 3] = 1.0
    out = rotate_image(x, 45.0)[0]
    s = np.sqrt(0.5)
    # output (1, 3) maps back to source (2 - (s - s), 2 + 2s) ~ (2, 3.414)
    src_c = 2 + 2 * s
    assert out[1, 3] == pytest.approx(1 - (src_c - 3), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), angle=st.floats(-180, 180))
def test_rotation_preserves_range(seed, angle):
    x = np.random.default_rng(seed).uniform(0, 1, (2, 1, 28, 28))
    out = rotate_images(x, [angle, -angle])
    assert out.min() >= 0 and out.max() <= 1


def _interior_mae(x, y):
    H, W = x.shape[-2:]
    r, c = np.mgrid[0:H, 0:W]
    disk = (r - (H - 1) / 2) ** 2 + (c - (W - 1) / 2) ** 2 <= (min(H, W) / 2 - 2) ** 2
    return float(np.abs(x - y)[..., disk].mean())


@requires_mnist
def test_rotation_round_trip_error_regression(mnist):
    x = mnist[2].images[:200]
    rng = np.random.default_rng(0)
    angles = rng.uniform(-180, 180, len(x))
    back = rotate_images(rotate_images(x, angles), -angles)
    assert _interior_mae(back, x) <= 0.05


@requires_mnist
@pytest.mark.xfail(strict=True, reason="two bilinear resamplings blur MNIST strokes; measured interior MAE ~0.045")
def test_rotation_round_trip_error_within_0_02(mnist):
    x = mnist[2].images[:200]
    angles = np.random.default_rng(0).uniform(-180, 180, len(x))
    back = rotate_images(rotate_images(x, angles), -angles)
    assert _interior_mae(back, x) <= 0.02


def test_round_trip_exact_on_quarter_turns():
    x = np.random.default_rng(3).uniform(0, 1, (4, 1, 28, 28))
    angles = np.array([90.0, 180.0, -90.0, 270.0])
    np.testing.assert_array_equal(rotate_images(rotate_images(x, angles), -angles), x)


# augmentation / subset -------------------------------------------------------


def _toy(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.uniform(0, 1, (n, 1, 28, 28)), np.arange(n) % 10)


def test_augmentation_theta_zero_is_identity():
    ds = _toy()
    out = random_rotation_augment(ds, AugmentationPolicy(0.0, seed=1))
    np.testing.assert_array_equal(out.images, ds.images)
    np.testing.assert_array_equal(out.labels, ds.labels)


def test_augmentation_is_deterministic_and_keeps_labels():
    ds = _toy()
    before = ds.images.copy()
    a = random_rotation_augment(ds, AugmentationPolicy(45.0, seed=5, draws_per_image=2))
    b = random_rotation_augment(ds, AugmentationPolicy(45.0, seed=5, draws_per_image=2))
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, np.repeat(ds.labels, 2))
    np.testing.assert_array_equal(ds.images, before)
    assert a.images.min() >= 0 and a.images.max() <= 1


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentationPolicy(181.0)
    with pytest.raises(ValueError):
        AugmentationPolicy(10.0, draws_per_image=0)


@pytest.mark.parametrize("theta", [30.0, 180.0])
def test_angle_draws_are_uniform(theta):
    angles = sample_angles(np.random.default_rng(11), 100_000, theta)
    assert angles.min() >= -theta and angles.max() <= theta
    d = stats.kstest(angles, stats.uniform(loc=-theta, scale=2 * theta).cdf).statistic
    # asymptotic 1% critical value of the one-sample KS statistic
    assert d < 1.6276 / np.sqrt(len(angles))


def test_subset_contracts():
    ds = _toy(50)
    full = subset(ds, 50, seed=0)
    assert sorted(map(tuple, full.images.reshape(50, -1)[:, :3])) == sorted(map(tuple, ds.images.reshape(50, -1)[:, :3]))
    ten = subset(ds, 10, seed=3)
    np.testing.assert_array_equal(np.sort(ten.labels), np.arange(10))
    np.testing.assert_array_equal(subset(ds, 17, seed=4).images, subset(ds, 17, seed=4).images)
    with pytest.raises(ValueError):
        subset(ds, 51)


def test_subset_is_stratified_for_unbalanced_classes():
    labels = np.array([0] * 60 + [1] * 30 + [2] * 10)
    ds = LabeledDataset(np.zeros((100, 1, 28, 28)), labels)
    out = subset(ds, 20, seed=0)
    np.testing.assert_array_equal(np.bincount(out.labels), [12, 6, 2])


@requires_mnist
def test_full_mnist_splits(mnist):
    train, val, test = mnist
    assert (len(train), len(val), len(test)) == (55000, 5000, 10000)
    for ds in mnist:
        assert ds.images.shape[1:] == (1, 28, 28)
        assert ds.images.min() == 0.0 and ds.images.max() == 1.0
        assert set(np.unique(ds.labels)) == set(range(10))
