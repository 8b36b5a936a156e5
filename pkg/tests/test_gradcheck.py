import numpy as np
import pytest

from dsmstereo import gradcheck
from dsmstereo.errors import ValidationError
from dsmstereo.gradcheck import DiffOp, grad_check


def linear_op(scale=3.0):
    return DiffOp("triple", lambda x: 3.0 * x, lambda g, x: (scale * g,), lambda r: (r.normal(size=(4, 3)),), linear=True)


@pytest.mark.parametrize("eps", [1e-2, 1e-4, 1e-6])
def test_linear_op_exact(eps):
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert grad_check(linear_op(), [x], eps=eps) < 1e-8


def test_planted_fault_doubled():
    x = np.random.default_rng(0).normal(size=(4, 3))
    # |2n - n| / max(|2n|, |n|) = 0.5
    assert abs(grad_check(linear_op(6.0), [x]) - 0.5) < 1e-6


def test_planted_fault_sign():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert abs(grad_check(linear_op(-3.0), [x]) - 2.0) < 1e-6


def test_non_finite_forward():
    op = DiffOp("log", np.log, lambda g, x: (g / x,), None)
    with pytest.raises(ValidationError), np.errstate(invalid="ignore"):
        grad_check(op, [np.array([-1.0, 2.0])])


def test_soft_argmin_registered():
    op = gradcheck.OPS["soft_argmin"]
    rng = np.random.default_rng(5)
    assert grad_check(op, op.sample(rng), eps=1e-4) < 1e-5


@pytest.mark.parametrize("name", sorted(set(gradcheck.OPS) - {"kernel_net", "regularizer"}))
def test_registry_ops_pass(name):
    (result,) = gradcheck.run_suite([name], trials=3, seed=11)
    assert result.passed, result
