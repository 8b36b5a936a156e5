import numpy as np
import pytest

from dsmstereo.errors import ArgumentError
from dsmstereo.synthetic import SyntheticConfig, gen_synthetic_pair, make_dataset, sample_seeds


def test_zero_disparity_identical_views():
    s = gen_synthetic_pair(4, SyntheticConfig(32, 64, 8, constant_disparity=0))
    assert np.array_equal(s.left, s.right)
    assert not s.occlusion.any()


@pytest.mark.parametrize("k", [1, 3, 7])
def test_constant_shift(k):
    s = gen_synthetic_pair(k, SyntheticConfig(32, 64, 8, constant_disparity=k))
    # right(x) = left(x + k), i.e. left pixel x lands at x - k
    np.testing.assert_array_equal(s.right[:, : 64 - k], s.left[:, k:])
    assert s.occlusion[:, :k].all() and not s.occlusion[:, k:].any()


@pytest.mark.parametrize("seed", range(6))
def test_warp_consistency(seed):
    s = gen_synthetic_pair(seed, SyntheticConfig(textureless_fraction=0.1))
    h, w = s.left.shape
    ys, xs = np.nonzero(s.occlusion == 0)
    src = xs - s.disparity[ys, xs].astype(int)
    assert np.all(src >= 0)
    np.testing.assert_array_equal(s.right[ys, src], s.left[ys, xs])


def test_integer_disparities_in_range():
    s = gen_synthetic_pair(9, SyntheticConfig(max_disp=10))
    assert np.all(s.disparity == np.round(s.disparity))
    assert s.disparity.min() >= 0 and s.disparity.max() <= 10


def test_textureless_regions_are_flat():
    s = gen_synthetic_pair(2, SyntheticConfig(textureless_fraction=0.2))
    assert s.textureless.mean() >= 0.2
    assert np.unique(s.left[s.textureless > 0]).size < 20


def test_determinism_and_split_disjointness():
    cfg = SyntheticConfig(32, 64, 6)
    a, b = make_dataset(0, 3, cfg), make_dataset(0, 3, cfg)
    assert all(np.array_equal(x.left, y.left) and np.array_equal(x.disparity, y.disparity) for x, y in zip(a, b))
    assert not set(sample_seeds(0, 16, "train")) & set(sample_seeds(0, 16, "test"))


@pytest.mark.parametrize("kwargs", [dict(max_disp=32), dict(height=4), dict(textureless_fraction=1.0),
                                    dict(constant_disparity=20)])
def test_invalid_config(kwargs):
    with pytest.raises(ArgumentError):
        SyntheticConfig(**kwargs)
