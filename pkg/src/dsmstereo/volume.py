"""Dense volume and map conventions, plus the cost -> probability softmax.

Volumes are plain ``float64`` arrays laid out as ``(d, y, x)``: a cost volume
``C[d, y, x]`` scores how poorly left pixel ``(x, y)`` matches right pixel
``(x - d, y)``.  A probability volume has the same layout and sums to one over
its first axis at every pixel.  2D maps (disparity, matchability, log-scale,
weights, masks) are ``(y, x)`` arrays.

Operations here never modify their inputs.
"""

import numpy as np

from .errors import ArgumentError, ValidationError

NORMALIZATION_TOL = 1e-6


def check_finite(arr, what="input"):
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")
    return arr


def check_volume(vol, what="volume"):
    vol = check_finite(vol, what)
    if vol.ndim != 3:
        raise ArgumentError(f"{what} must be (D, H, W), got shape {vol.shape}")
    if vol.shape[0] < 2:
        raise ArgumentError(f"{what} needs at least 2 disparity samples")
    if min(vol.shape) < 1:
        raise ArgumentError(f"{what} has an empty dimension: {vol.shape}")
    return vol


def check_probability(prob, tol=1e-4, what="probability volume"):
    """Validate a probability volume; ``tol`` bounds the per-pixel sum error."""
    prob = check_volume(prob, what)
    if np.any(prob < 0):
        raise ValidationError(f"{what} has negative entries")
    sums = prob.sum(axis=0)
    if np.max(np.abs(sums - 1.0)) > tol:
        raise ValidationError(f"{what} is not normalized over disparity (max deviation {np.max(np.abs(sums - 1.0)):.3g})")
    return prob


def check_same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ArgumentError(f"shape mismatch: {shape} vs {np.shape(a)}")


def softmax_over_disparity(cost, temperature=1.0):
    """Turn a cost volume into a probability volume, lower cost -> higher probability.

    ``P[d] = exp(-c[d] / T) / sum_k exp(-c[k] / T)`` per pixel, evaluated with
    the per-pixel minimum cost subtracted so that large costs cannot overflow.
    """
    cost = check_volume(cost, "cost volume")
    if not temperature > 0:
        raise ArgumentError(f"temperature must be positive, got {temperature}")
    logits = -(cost - cost.min(axis=0, keepdims=True)) / temperature
    e = np.exp(logits)
    return e / e.sum(axis=0, keepdims=True)


def softmax_over_disparity_backward(prob, grad_prob, temperature=1.0):
    """Gradient w.r.t. the cost volume given ``prob`` from the forward pass."""
    check_same_shape(prob, grad_prob)
    inner = (prob * grad_prob).sum(axis=0, keepdims=True)
    return -prob * (grad_prob - inner) / temperature


def _interp_matrix(n_in, factor):
    """Linear interpolation weights from ``n_in`` samples to ``n_in * factor``.

    Pixel centres are aligned (half-pixel convention), coordinates outside the
    input range are clamped to the border samples.
    """
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def upsample_trilinear(vol, factor, kind="cost"):
    """Upsample a volume by ``factor`` in y and x; the disparity axis is untouched.

    ``kind`` is ``"cost"`` or ``"probability"``; probability volumes are
    re-normalized over disparity after interpolation.
    """
    if kind not in ("cost", "probability"):
        raise ArgumentError(f"unknown volume kind {kind!r}")
    if int(factor) != factor or factor < 1:
        raise ArgumentError(f"upsampling factor must be a positive integer, got {factor}")
    vol = check_volume(vol)
    if factor == 1:
        return vol.copy()
    uy = _interp_matrix(vol.shape[1], factor)
    ux = _interp_matrix(vol.shape[2], factor)
    out = np.einsum("ya,dab,xb->dyx", uy, vol, ux, optimize=True)
    if kind == "probability":
        out = out / out.sum(axis=0, keepdims=True)
    return out


def upsample_trilinear_backward(grad_out, factor):
    """Adjoint of :func:`upsample_trilinear` for cost volumes."""
    if factor == 1:
        return np.array(grad_out, dtype=np.float64)
    h, w = grad_out.shape[1] // factor, grad_out.shape[2] // factor
    uy = _interp_matrix(h, factor)
    ux = _interp_matrix(w, factor)
    return np.einsum("ya,dyx,xb->dab", uy, grad_out, ux, optimize=True)
