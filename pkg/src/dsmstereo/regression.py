"""Reductions of a probability volume to per-pixel maps.

Disparity is the expectation of the disparity index; matchability is the
Shannon entropy of the per-pixel distribution (larger = harder to match).
"""

import numpy as np

from .errors import ArgumentError, ValidationError
from .volume import check_probability, check_volume

LOG_CLAMP = 1e-12


def _disparity_index(n):
    return np.arange(n, dtype=np.float64)[:, None, None]


def soft_argmin(prob):
    """Expected disparity ``sum_d P[d] * d`` at every pixel."""
    prob = check_probability(prob)
    return (prob * _disparity_index(prob.shape[0])).sum(axis=0)


def soft_argmin_backward(prob, grad_disp):
    grad_disp = np.asarray(grad_disp, dtype=np.float64)
    if np.shape(prob)[1:] != grad_disp.shape:
        raise ArgumentError(f"upstream gradient {grad_disp.shape} does not match volume {np.shape(prob)}")
    return grad_disp[None, :, :] * _disparity_index(np.shape(prob)[0])


def entropy_matchability(prob):
    """Per-pixel entropy ``-sum_d P log P`` with ``0 log 0 = 0``.

    Ranges over ``[0, log D]``; a point mass gives 0, a uniform distribution
    gives ``log D``.
    """
    prob = check_volume(prob, "probability volume")
    if np.any(prob < 0):
        raise ValidationError("probability volume has negative entries")
    plogp = np.where(prob > 0, prob * np.log(np.where(prob > 0, prob, 1.0)), 0.0)
    return -plogp.sum(axis=0)


def entropy_backward(prob, grad_match):
    grad_match = np.asarray(grad_match, dtype=np.float64)
    if np.shape(prob)[1:] != grad_match.shape:
        raise ArgumentError(f"upstream gradient {grad_match.shape} does not match volume {np.shape(prob)}")
    return -(np.log(np.maximum(prob, LOG_CLAMP)) + 1.0) * grad_match[None, :, :]
