"""Training losses and ground-truth validity masking.

All losses are means over valid pixels.  Each ``*_grad`` function returns the
gradient of the corresponding loss; masked pixels receive exactly zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateInputError
from .volume import check_same_shape

DEFAULT_MAX_DISPARITY = 192.0


@dataclass(frozen=True)
class LossBreakdown:
    l1_init: float
    joint: float
    l1_refined: float
    total: float
    valid_pixel_count: int = 0


def valid_mask(gt, d_max=DEFAULT_MAX_DISPARITY):
    """1 where ground truth is present, non-negative and at most ``d_max``.

    Missing ground truth is encoded as any non-finite or negative value.
    """
    gt = np.asarray(gt, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(gt) & (gt >= 0) & (gt <= d_max)
    return ok.astype(np.float64)


def _valid(disp, gt, mask):
    check_same_shape(disp, gt, mask)
    sel = np.asarray(mask) > 0
    n = int(sel.sum())
    if n == 0:
        raise DegenerateInputError("no valid pixels under the mask")
    return sel, n


def l1_loss(disp, gt, mask):
    sel, n = _valid(disp, gt, mask)
    return float(np.abs(disp[sel] - gt[sel]).sum() / n)


def l1_loss_grad(disp, gt, mask):
    sel, n = _valid(disp, gt, mask)
    # np.sign(0) == 0 gives the zero subgradient at the kink
    return np.where(sel, np.sign(disp - np.where(sel, gt, 0.0)), 0.0) / n


def joint_loss(disp, logscale, gt, mask):
    """Laplacian negative log-likelihood ``|D - Dgt| * exp(-B') + B'`` averaged."""
    check_same_shape(disp, logscale)
    sel, n = _valid(disp, gt, mask)
    err = np.abs(disp[sel] - gt[sel])
    return float((err * np.exp(-logscale[sel]) + logscale[sel]).sum() / n)


def joint_loss_grad(disp, logscale, gt, mask):
    """Returns ``(grad_disp, grad_logscale)``."""
    check_same_shape(disp, logscale)
    sel, n = _valid(disp, gt, mask)
    diff = np.where(sel, disp - np.where(sel, gt, 0.0), 0.0)
    w = np.exp(-logscale)
    g_disp = np.where(sel, np.sign(diff) * w, 0.0) / n
    g_log = np.where(sel, 1.0 - np.abs(diff) * w, 0.0) / n
    return g_disp, g_log


def total_loss(l1_init, joint, l1_refined, lambda_init=1.0, lambda_joint=1.0, lambda_refined=1.0, valid_pixel_count=0):
    """Weighted sum of the three loss terms."""
    if min(lambda_init, lambda_joint, lambda_refined) < 0:
        raise ArgumentError("loss weights must be non-negative")
    total = lambda_init * l1_init + lambda_joint * joint + lambda_refined * l1_refined
    return LossBreakdown(float(l1_init), float(joint), float(l1_refined), float(total), int(valid_pixel_count))
