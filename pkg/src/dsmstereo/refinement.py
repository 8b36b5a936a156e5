"""Matchability-aware disparity refinement by convolutional spatial propagation.

A small encoder-decoder predicts, for every pixel, the ``k*k - 1`` neighbour
affinities of a diffusion kernel from the stacked maps {disparity, left
luminance, matchability}.  After normalization the kernels are applied
repeatedly to the disparity map (24 times by default).

Kernel maps are ``(H, W, k, k)`` arrays.  ``kernels[y, x, i, j]`` weights the
disparity at column ``x + i - k//2`` and row ``y + j - k//2``; the centre entry
``[y, x, k//2, k//2]`` is the pixel itself.  Borders replicate edge values.
"""

import numpy as np

from . import layers
from .errors import ArgumentError, ValidationError
from .volume import check_finite, check_same_shape

DEFAULT_ITERATIONS = 24
KERNEL_SIZE = 3
WIDTHS = (16, 32, 16)
PREFIX = "kernel"


def init_params(rng, k=KERNEL_SIZE):
    c1, c2, c3 = WIDTHS
    out = k * k - 1
    return {
        f"{PREFIX}.conv1.w": layers.he_normal(rng, (c1, 3, 3, 3)),
        f"{PREFIX}.conv1.b": np.zeros(c1),
        f"{PREFIX}.conv2.w": layers.he_normal(rng, (c2, c1, 3, 3)),
        f"{PREFIX}.conv2.b": np.zeros(c2),
        f"{PREFIX}.conv3.w": layers.he_normal(rng, (c3, c2, 3, 3)),
        f"{PREFIX}.conv3.b": np.zeros(c3),
        # zero head: untrained refinement is the identity
        f"{PREFIX}.conv4.w": np.zeros((out, c3, 3, 3)),
        f"{PREFIX}.conv4.b": np.zeros(out),
    }


def kernel_size_of(params):
    out = params[f"{PREFIX}.conv4.w"].shape[0]
    k = int(round(np.sqrt(out + 1)))
    if k * k - 1 != out or k % 2 == 0:
        raise ArgumentError(f"kernel head has {out} channels, not k*k-1 for odd k")
    return k


def _neighbour_positions(k):
    r = k // 2
    return [(i, j) for i in range(k) for j in range(k) if (i, j) != (r, r)]


def refinement_input(disp, image, match, disparities, use_matchability=True):
    """Stack and rescale the three guidance maps into a ``(3, H, W)`` array."""
    check_same_shape(disp, image, match)
    scale_d = 1.0 / max(disparities - 1, 1)
    scale_m = 1.0 / np.log(disparities)
    m = match * scale_m if use_matchability else np.zeros_like(match)
    return np.stack([disp * scale_d, image, m]), (scale_d, scale_m if use_matchability else 0.0)


def extract_diffusion_kernels(disp, image, match, params, disparities, use_matchability=True, return_cache=False):
    """Predict raw neighbour affinities; the centre entry of the result is 0.

    ``disp`` is divided by ``disparities - 1`` and ``match`` by
    ``log(disparities)`` before entering the network; ``image`` is expected
    in ``[0, 1]``.  With ``use_matchability=False`` the matchability channel
    is fed as zeros.
    """
    for name, m in (("disparity", disp), ("image", image), ("matchability", match)):
        m = np.asarray(m)
        if m.ndim != 2:
            raise ArgumentError(f"{name} map must be 2D, got shape {m.shape}")
    x, scales = refinement_input(disp, image, match, disparities, use_matchability)
    p = {key: params[f"{PREFIX}.{key}"] for key in
         ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b", "conv4.w", "conv4.b")}
    k = kernel_size_of(params)
    h, w = x.shape[1:]

    z1, c1 = layers.conv2d(x, p["conv1.w"], p["conv1.b"])
    e1, r1 = layers.relu(z1)
    pooled, pc = layers.avg_pool2(e1)
    z2, c2 = layers.conv2d(pooled, p["conv2.w"], p["conv2.b"])
    e2, r2 = layers.relu(z2)
    up = layers.upsample_nearest2(e2, (h, w))
    z3, c3 = layers.conv2d(up, p["conv3.w"], p["conv3.b"])
    d1, r3 = layers.relu(z3 + e1)
    out, c4 = layers.conv2d(d1, p["conv4.w"], p["conv4.b"])

    raw = np.zeros((h, w, k, k))
    for ch, (i, j) in enumerate(_neighbour_positions(k)):
        raw[:, :, i, j] = out[ch]
    if return_cache:
        return raw, (c1, r1, pc, c2, r2, e2.shape[1:], c3, r3, c4, scales, k)
    return raw


def extract_diffusion_kernels_backward(grad_raw, cache):
    """Returns ``(grad_disp, grad_image, grad_match, param_grads)``."""
    c1, r1, pc, c2, r2, small, c3, r3, c4, (scale_d, scale_m), k = cache
    gout = np.stack([grad_raw[:, :, i, j] for i, j in _neighbour_positions(k)])
    gd1, gw4, gb4 = layers.conv2d_backward(gout, c4)
    gsum = layers.relu_backward(gd1, r3)
    gup, gw3, gb3 = layers.conv2d_backward(gsum, c3)
    ge2 = layers.upsample_nearest2_backward(gup, small)
    gz2 = layers.relu_backward(ge2, r2)
    gpool, gw2, gb2 = layers.conv2d_backward(gz2, c2)
    ge1 = gsum + layers.avg_pool2_backward(gpool, pc)
    gz1 = layers.relu_backward(ge1, r1)
    gx, gw1, gb1 = layers.conv2d_backward(gz1, c1)
    grads = {
        f"{PREFIX}.conv1.w": gw1, f"{PREFIX}.conv1.b": gb1,
        f"{PREFIX}.conv2.w": gw2, f"{PREFIX}.conv2.b": gb2,
        f"{PREFIX}.conv3.w": gw3, f"{PREFIX}.conv3.b": gb3,
        f"{PREFIX}.conv4.w": gw4, f"{PREFIX}.conv4.b": gb4,
    }
    return gx[0] * scale_d, gx[1], gx[2] * scale_m, grads


def _check_kernels(kernels):
    kernels = check_finite(kernels, "kernel map")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3] or kernels.shape[2] % 2 == 0:
        raise ArgumentError(f"kernel map must be (H, W, k, k) with odd k, got {kernels.shape}")
    return kernels


def normalize_affinities(raw):
    """Scale neighbour weights so their absolute sum is at most 1; centre = 1 - sum.

    The raw centre entry is ignored.
    """
    raw = _check_kernels(raw)
    r = raw.shape[2] // 2
    nb = raw.copy()
    nb[:, :, r, r] = 0.0
    denom = np.maximum(np.abs(nb).sum(axis=(2, 3)), 1.0)
    out = nb / denom[:, :, None, None]
    out[:, :, r, r] = 1.0 - out.sum(axis=(2, 3))
    return out


def normalize_affinities_backward(grad_norm, raw):
    r = raw.shape[2] // 2
    nb = raw.copy()
    nb[:, :, r, r] = 0.0
    abs_sum = np.abs(nb).sum(axis=(2, 3))
    scaled = abs_sum > 1.0
    denom = np.maximum(abs_sum, 1.0)[:, :, None, None]
    # centre = 1 - sum(neighbours)
    g = grad_norm - grad_norm[:, :, r : r + 1, r : r + 1]
    g[:, :, r, r] = 0.0
    # d(n_j / s)/d n_i = delta_ij / s - n_j sign(n_i) / s^2, applied only where s > 1
    dot = (g * nb).sum(axis=(2, 3))[:, :, None, None]
    g_scaled = g / denom - np.sign(nb) * dot / denom**2
    out = np.where(scaled[:, :, None, None], g_scaled, g)
    out[:, :, r, r] = 0.0
    return out


def _shifted(padded, i, j, h, w):
    return padded[j : j + h, i : i + w]


def _step(disp, kernels, k):
    # D + sum_nb w (D_nb - D) equals sum w D when the weights sum to 1, and
    # keeps constant maps exactly fixed whatever the signs of the weights
    r = k // 2
    h, w = disp.shape
    padded = np.pad(disp, r, mode="edge")
    out = disp.copy()
    for i, j in _neighbour_positions(k):
        out += kernels[:, :, i, j] * (_shifted(padded, i, j, h, w) - disp)
    return out


def _pad_edge_backward(grad_padded, r):
    g = grad_padded.copy()
    g[r, :] += g[:r, :].sum(axis=0)
    g[-r - 1, :] += g[-r:, :].sum(axis=0)
    g[:, r] += g[:, :r].sum(axis=1)
    g[:, -r - 1] += g[:, -r:].sum(axis=1)
    return g[r:-r, r:-r]


def _step_backward(grad_out, disp, kernels, k):
    r = k // 2
    h, w = disp.shape
    padded = np.pad(disp, r, mode="edge")
    g_kernels = np.zeros_like(kernels)
    g_padded = np.zeros_like(padded)
    g_disp = grad_out.copy()
    for i, j in _neighbour_positions(k):
        g_kernels[:, :, i, j] = grad_out * (_shifted(padded, i, j, h, w) - disp)
        weighted = grad_out * kernels[:, :, i, j]
        g_padded[j : j + h, i : i + w] += weighted
        g_disp -= weighted
    return g_disp + _pad_edge_backward(g_padded, r), g_kernels


def cspn_step(disp, kernels):
    """One propagation step with already-normalized kernels (no validation).

    The centre weight is taken to be one minus the neighbour weights.
    """
    return _step(np.asarray(disp, dtype=np.float64), kernels, kernels.shape[2])


def cspn_step_backward(grad_out, disp, kernels):
    """Returns ``(grad_disp, grad_kernels)`` for :func:`cspn_step`."""
    return _step_backward(grad_out, np.asarray(disp, dtype=np.float64), kernels, kernels.shape[2])


def cspn_refine(disp, kernels, iterations=DEFAULT_ITERATIONS, return_cache=False):
    """Diffuse ``disp`` with per-pixel normalized kernels for ``iterations`` steps."""
    disp = check_finite(disp, "disparity map")
    kernels = _check_kernels(kernels)
    if disp.ndim != 2 or kernels.shape[:2] != disp.shape:
        raise ArgumentError(f"kernel map {kernels.shape} does not cover disparity map {disp.shape}")
    if int(iterations) != iterations or iterations < 0:
        raise ArgumentError(f"iterations must be a non-negative integer, got {iterations}")
    sums = kernels.sum(axis=(2, 3))
    if np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ValidationError("kernel weights do not sum to 1; normalize them first")
    k = kernels.shape[2]
    history = [disp]
    cur = disp.copy()
    for _ in range(int(iterations)):
        cur = _step(cur, kernels, k)
        history.append(cur)
    if return_cache:
        return cur, (history, kernels)
    return cur


def cspn_refine_backward(grad_out, cache):
    """Returns ``(grad_disp0, grad_kernels)``."""
    history, kernels = cache
    k = kernels.shape[2]
    g = np.array(grad_out, dtype=np.float64)
    g_kernels = np.zeros_like(kernels)
    for disp in reversed(history[:-1]):
        g, gk = _step_backward(g, disp, kernels, k)
        g_kernels += gk
    return g, g_kernels
