"""Matchability -> log-scale mapping and the attenuation utilities built on it.

The mapping is a two-layer 3x3 convolutional net (1 -> 8 -> 1 channels with a
rectifier in between) applied to the matchability map alone.  Its output is
the log of the Laplacian scale, ``B' = log B``, clamped to ``[-3, 6]``.
"""

import numpy as np

from . import layers
from .errors import ValidationError
from .volume import check_finite

LOGSCALE_MIN = -3.0
LOGSCALE_MAX = 6.0
HIDDEN = 8
PREFIX = "uncertainty"


def init_params(rng):
    return {
        f"{PREFIX}.conv1.w": layers.he_normal(rng, (HIDDEN, 1, 3, 3)),
        f"{PREFIX}.conv1.b": np.zeros(HIDDEN),
        f"{PREFIX}.conv2.w": layers.he_normal(rng, (1, HIDDEN, 3, 3), scale=0.1),
        f"{PREFIX}.conv2.b": np.zeros(1),
    }


def _check_params(params):
    for key in ("conv1.w", "conv1.b", "conv2.w", "conv2.b"):
        check_finite(params[f"{PREFIX}.{key}"], f"{PREFIX}.{key}")


def matchability_to_logscale(match, params, return_cache=False):
    """Map a matchability map ``(H, W)`` to a clamped log-scale map ``(H, W)``."""
    match = check_finite(match, "matchability map")
    try:
        _check_params(params)
    except KeyError as exc:
        raise ValidationError(f"missing uncertainty parameter {exc}") from None
    h1, c1 = layers.conv2d(match[None], params[f"{PREFIX}.conv1.w"], params[f"{PREFIX}.conv1.b"])
    a1, r1 = layers.relu(h1)
    h2, c2 = layers.conv2d(a1, params[f"{PREFIX}.conv2.w"], params[f"{PREFIX}.conv2.b"])
    raw = h2[0]
    logscale = np.clip(raw, LOGSCALE_MIN, LOGSCALE_MAX)
    if return_cache:
        inside = (raw > LOGSCALE_MIN) & (raw < LOGSCALE_MAX)
        return logscale, (c1, r1, c2, inside)
    return logscale


def matchability_to_logscale_backward(grad_logscale, cache):
    """Returns ``(grad_match, param_grads)``."""
    c1, r1, c2, inside = cache
    g2 = (grad_logscale * inside)[None]
    ga1, gw2, gb2 = layers.conv2d_backward(g2, c2)
    gh1 = layers.relu_backward(ga1, r1)
    gm, gw1, gb1 = layers.conv2d_backward(gh1, c1)
    grads = {
        f"{PREFIX}.conv1.w": gw1,
        f"{PREFIX}.conv1.b": gb1,
        f"{PREFIX}.conv2.w": gw2,
        f"{PREFIX}.conv2.b": gb2,
    }
    return gm[0], grads


def attenuation_weights(logscale):
    """Per-pixel loss weight ``1 / B = exp(-B')``."""
    return np.exp(-check_finite(logscale, "log-scale map"))


def matchable_mask(logscale):
    """1 where the attenuation weight exceeds 1 (``B' < 0``), else 0."""
    return (check_finite(logscale, "log-scale map") < 0).astype(np.float64)
