import numpy as np
import pytest

from dsmstereo.errors import ArgumentError, ValidationError
from dsmstereo.regression import entropy_backward, entropy_matchability, soft_argmin, soft_argmin_backward

from conftest import numeric_grad, random_simplex, rel_err


def one_hot(d, size, h=2, w=3):
    p = np.zeros((size, h, w))
    p[d] = 1.0
    return p


def test_soft_argmin_one_hot():
    assert np.all(soft_argmin(one_hot(5, 16)) == 5.0)


def test_soft_argmin_uniform():
    np.testing.assert_allclose(soft_argmin(np.full((8, 2, 2), 1 / 8)), 3.5, rtol=1e-15)


def test_soft_argmin_two_point():
    p = np.array([0.25, 0.75]).reshape(2, 1, 1)
    assert soft_argmin(p)[0, 0] == 0.75


def test_soft_argmin_rejects_unnormalized():
    with pytest.raises(ValidationError):
        soft_argmin(np.full((4, 2, 2), 0.3))


def test_soft_argmin_backward_planes():
    g = soft_argmin_backward(np.full((4, 2, 3), 0.25), np.ones((2, 3)))
    np.testing.assert_array_equal(g, np.broadcast_to(np.arange(4.0)[:, None, None], (4, 2, 3)))
    assert not soft_argmin_backward(np.full((4, 2, 3), 0.25), np.zeros((2, 3))).any()


def test_soft_argmin_backward_shape_mismatch():
    with pytest.raises(ArgumentError):
        soft_argmin_backward(np.full((4, 2, 3), 0.25), np.ones((3, 2)))


def test_soft_argmin_backward_differences(rng):
    p = random_simplex(rng, 5, 3, 3)
    up = rng.normal(size=(3, 3))
    # the forward map is linear in P; differentiate it without renormalization
    num = numeric_grad(lambda q: float(((np.arange(5.0)[:, None, None] * q).sum(axis=0) * up).sum()), p, eps=1e-4)
    assert rel_err(soft_argmin_backward(p, up), num) < 1e-5


def test_entropy_uniform():
    assert abs(entropy_matchability(np.full((8, 2, 2), 1 / 8))[0, 0] - np.log(8)) < 1e-12


def test_entropy_one_hot_is_zero():
    assert np.all(entropy_matchability(one_hot(2, 6)) == 0.0)


def test_entropy_two_point():
    p = np.array([0.5, 0.5, 0.0, 0.0]).reshape(4, 1, 1)
    assert abs(entropy_matchability(p)[0, 0] - np.log(2)) < 1e-12


def test_entropy_is_nonnegative_and_bounded(rng):
    m = entropy_matchability(random_simplex(rng, 7, 5, 5))
    assert np.all(m >= 0) and np.all(m <= np.log(7) + 1e-12)


def test_entropy_rejects_negative():
    p = np.array([1.1, -0.1]).reshape(2, 1, 1)
    with pytest.raises(ValidationError):
        entropy_matchability(p)


def test_entropy_backward_uniform():
    d = 6
    up = np.array([[1.0, -2.0]])
    g = entropy_backward(np.full((d, 1, 2), 1 / d), up)
    np.testing.assert_allclose(g, np.broadcast_to(-(np.log(1 / d) + 1) * up, (d, 1, 2)), rtol=1e-14)
    assert not entropy_backward(np.full((d, 1, 2), 1 / d), np.zeros((1, 2))).any()


def test_entropy_backward_shape_mismatch():
    with pytest.raises(ArgumentError):
        entropy_backward(np.full((4, 2, 3), 0.25), np.ones((2, 2)))


def test_entropy_backward_differences(rng):
    p = random_simplex(rng, 5, 3, 3, floor=0.05)
    up = rng.normal(size=(3, 3))
    num = numeric_grad(lambda q: float((-(q * np.log(q)).sum(axis=0) * up).sum()), p)
    assert rel_err(entropy_backward(p, up), num) < 1e-4
