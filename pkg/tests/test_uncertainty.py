import numpy as np
import pytest

from dsmstereo import uncertainty
from dsmstereo.errors import ValidationError

from conftest import numeric_grad, rel_err


def constant_params(bias):
    p = uncertainty.init_params(np.random.default_rng(0))
    p["uncertainty.conv2.w"][:] = 0.0
    p["uncertainty.conv2.b"][:] = bias
    return p


def test_zero_weights_give_bias():
    out = uncertainty.matchability_to_logscale(np.random.default_rng(1).uniform(0, 2, (5, 6)), constant_params(-0.4))
    assert np.all(out == -0.4)


@pytest.mark.parametrize("bias, expected", [(10.0, 6.0), (-9.0, -3.0)])
def test_clamp(bias, expected):
    assert np.all(uncertainty.matchability_to_logscale(np.zeros((3, 3)), constant_params(bias)) == expected)


def test_gradient_is_zero_outside_clamp():
    p = constant_params(10.0)
    _, cache = uncertainty.matchability_to_logscale(np.ones((3, 3)), p, return_cache=True)
    gm, grads = uncertainty.matchability_to_logscale_backward(np.ones((3, 3)), cache)
    assert not gm.any() and all(not g.any() for g in grads.values())


def test_non_finite_params():
    p = constant_params(0.0)
    p["uncertainty.conv1.w"][0, 0, 0, 0] = np.inf
    with pytest.raises(ValidationError):
        uncertainty.matchability_to_logscale(np.zeros((3, 3)), p)


def test_missing_params():
    with pytest.raises(ValidationError):
        uncertainty.matchability_to_logscale(np.zeros((3, 3)), {})


def test_param_gradients_match_differences(rng):
    p = uncertainty.init_params(rng)
    p = {k: v + 0.05 * rng.normal(size=v.shape) for k, v in p.items()}
    p["uncertainty.conv2.w"] *= 5.0
    m = rng.uniform(0, 2, (5, 5))
    up = rng.normal(size=(5, 5))
    _, cache = uncertainty.matchability_to_logscale(m, p, return_cache=True)
    gm, grads = uncertainty.matchability_to_logscale_backward(up, cache)
    for key in p:
        def f(v, key=key):
            q = dict(p, **{key: v})
            return float((uncertainty.matchability_to_logscale(m, q) * up).sum())

        assert rel_err(grads[key], numeric_grad(f, p[key])) < 1e-4, key
    num_m = numeric_grad(lambda x: float((uncertainty.matchability_to_logscale(x, p) * up).sum()), m)
    assert rel_err(gm, num_m) < 1e-4


@pytest.mark.parametrize("b, w", [(0.0, 1.0), (np.log(2), 0.5), (-np.log(4), 4.0)])
def test_attenuation_weights(b, w):
    assert abs(uncertainty.attenuation_weights(np.array([[b]]))[0, 0] - w) < 1e-12


def test_matchable_mask_strict():
    out = uncertainty.matchable_mask(np.array([[-0.1, 0.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.0, 0.0, 0.0]])
