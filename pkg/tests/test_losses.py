import numpy as np
import pytest

from dsmstereo import losses
from dsmstereo.errors import ArgumentError, DegenerateInputError

from conftest import numeric_grad, rel_err


def test_valid_mask_bounds():
    gt = np.array([[200.0, 192.0, 0.0, -1.0, np.inf, np.nan, 50.0]])
    np.testing.assert_array_equal(losses.valid_mask(gt, 192), [[0, 1, 1, 0, 0, 0, 1]])


def test_l1_examples():
    gt = np.zeros((1, 4))
    d = np.array([[0.0, 1.0, -2.0, 5.0]])
    assert losses.l1_loss(gt, gt, np.ones_like(gt)) == 0.0
    assert losses.l1_loss(d, gt, np.ones_like(gt)) == 2.0
    assert losses.l1_loss(d, gt, np.array([[1.0, 1.0, 1.0, 0.0]])) == 1.0


def test_zero_valid_pixels():
    z = np.zeros((2, 2))
    with pytest.raises(DegenerateInputError):
        losses.l1_loss(z, z, z)
    with pytest.raises(DegenerateInputError):
        losses.joint_loss(z, z, z, z)


def test_joint_examples():
    one = np.ones((1, 1))
    assert losses.joint_loss(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), one) == 0.0
    v = losses.joint_loss(np.array([[2.0]]), np.array([[np.log(2)]]), np.zeros((1, 1)), one)
    assert abs(v - (1 + np.log(2))) < 1e-12


def test_joint_minimum_at_error():
    bs = np.linspace(0.5, 8, 3001)
    vals = [losses.joint_loss(np.array([[3.0]]), np.array([[np.log(b)]]), np.zeros((1, 1)), np.ones((1, 1))) for b in bs]
    assert abs(bs[int(np.argmin(vals))] - 3.0) < 0.01
    assert abs(min(vals) - (1 + np.log(3))) < 1e-5


def test_masked_pixels_ignore_garbage_gt():
    d = np.array([[1.0, 2.0]])
    gt = np.array([[1.0, np.nan]])
    mask = np.array([[1.0, 0.0]])
    assert losses.l1_loss(d, gt, mask) == 0.0
    gd, gb = losses.joint_loss_grad(d, np.zeros_like(d), gt, mask)
    assert np.all(np.isfinite(gd)) and np.all(np.isfinite(gb))


def test_l1_subgradient_at_kink_is_zero():
    g = losses.l1_loss_grad(np.array([[1.0, 2.0]]), np.array([[1.0, 1.0]]), np.ones((1, 2)))
    np.testing.assert_array_equal(g, [[0.0, 0.5]])


def test_joint_gradients_match_differences(rng):
    gt = rng.uniform(0, 10, (4, 5))
    d = gt + rng.choice([-1, 1], gt.shape) * rng.uniform(0.2, 3, gt.shape)
    b = rng.uniform(-2, 2, gt.shape)
    mask = (rng.uniform(size=gt.shape) > 0.3).astype(float)
    gd, gb = losses.joint_loss_grad(d, b, gt, mask)
    assert rel_err(gd, numeric_grad(lambda x: losses.joint_loss(x, b, gt, mask), d)) < 1e-6
    assert rel_err(gb, numeric_grad(lambda x: losses.joint_loss(d, x, gt, mask), b)) < 1e-6


def test_total_loss_unit_weights():
    out = losses.total_loss(0.5, 1.0, 0.4)
    assert abs(out.total - 1.9) < 1e-12
    assert (out.l1_init, out.joint, out.l1_refined) == (0.5, 1.0, 0.4)


def test_total_loss_ablations():
    assert losses.total_loss(0.5, 1.0, 0.4, lambda_joint=0).total == 0.9
    assert losses.total_loss(0.5, 1.0, 0.4, lambda_init=0).total == 1.4


def test_total_loss_negative_weight():
    with pytest.raises(ArgumentError):
        losses.total_loss(1, 1, 1, lambda_refined=-1)
