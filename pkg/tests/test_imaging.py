import numpy as np
import pytest
from scipy import ndimage

from deepgf.errors import ConfigError, ContractError
from deepgf.imaging import ImagePair, PhantomSpec, derive_seed, head_mask, make_dataset, make_phantom, nearest_downsample


def test_phantom_deterministic():
    spec = PhantomSpec(seed=42, size=48)
    for x, y in zip(make_phantom(spec), make_phantom(spec)):
        assert np.array_equal(x, y)
    other = make_phantom(spec.with_seed(43))
    assert not np.array_equal(make_phantom(spec)[0], other[0])


def test_single_shape_no_texture_is_two_valued():
    a, b, mask = make_phantom(PhantomSpec(seed=3, n_shapes=1, texture_amplitude=0.0))
    assert len(np.unique(a)) == 2 and len(np.unique(b)) == 2
    assert np.array_equal(a > 0, mask) and np.array_equal(b > 0, mask)


def test_modalities_share_edges():
    a, b, _ = make_phantom(PhantomSpec(seed=7, size=64, n_shapes=5))

    def edges(x):
        return np.hypot(ndimage.sobel(x, 0, mode="nearest"), ndimage.sobel(x, 1, mode="nearest")) > 0.05

    ea, eb = edges(a), edges(b)
    assert (ea & eb).sum() / (ea | eb).sum() > 0.8


def test_modalities_differ_in_intensity():
    a, b, mask = make_phantom(PhantomSpec(seed=7))
    assert np.abs(a - b)[mask].mean() > 0.05


@pytest.mark.parametrize("kw", [dict(size=31), dict(n_shapes=0), dict(contrast_a=(0.5, 0.2))])
def test_invalid_spec(kw):
    with pytest.raises(ConfigError):
        PhantomSpec(**kw)


def test_sr_dataset_contract():
    pairs = make_dataset(PhantomSpec(seed=1, size=64), "sr", n=3)
    assert len(pairs) == 3
    for p in pairs:
        assert p.input.shape == (16, 16) and p.guide.shape == (64, 64) and p.ground_truth.shape == (64, 64)
        for i in range(16):
            for j in range(16):
                assert p.input[i, j] == p.ground_truth[4 * i, 4 * j]
    assert len({p.seed for p in pairs}) == 3


def test_denoising_without_noise_is_identity():
    (p,) = make_dataset(PhantomSpec(seed=2), "denoising", None, 1)
    assert np.array_equal(p.input, p.ground_truth)


def test_dataset_errors():
    with pytest.raises(ConfigError):
        make_dataset(PhantomSpec(), "sr", n=0)
    with pytest.raises(ConfigError):
        make_dataset(PhantomSpec(), "deblur", n=1)


def test_image_pair_dimension_contract():
    z = np.zeros((32, 32))
    with pytest.raises(ContractError):
        ImagePair(np.zeros((16, 16)), z, z, z.astype(bool), "sr")
    with pytest.raises(ContractError):
        ImagePair(np.zeros((8, 8)), z, z, np.zeros((32, 31), bool), "sr")
    ImagePair(np.zeros((8, 8)), z, z, z.astype(bool), "sr")


def test_nearest_downsample_top_left():
    x = np.arange(64.0).reshape(8, 8)
    assert np.array_equal(nearest_downsample(x), x[::4, ::4])


def test_derive_seed_stable_and_distinct():
    assert derive_seed(5, 0) == derive_seed(5, 0)
    assert len({derive_seed(5, i) for i in range(100)}) == 100


def test_head_mask_trivial_cases():
    assert not head_mask(np.zeros((32, 32)), 0.1).any()
    assert head_mask(np.ones((32, 32)), 0.1).all()
    with pytest.raises(ConfigError):
        head_mask(np.ones((8, 8)), 1.0)


def test_head_mask_matches_support():
    a, _, mask = make_phantom(PhantomSpec(seed=7, size=64))
    # Threshold at half the rim level of the head ellipse (~0.64 for this seed).
    area = head_mask(a, 0.3).sum()
    assert abs(area / mask.sum() - 1.0) <= 0.05


def test_head_mask_fills_small_holes():
    x = np.ones((32, 32))
    x[15:17, 15:17] = 0.0
    assert head_mask(x, 0.5).all()
