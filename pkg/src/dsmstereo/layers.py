"""Convolution and pooling primitives with hand-written backward passes.

Every layer is a pair of functions: ``f(x, ...) -> (out, cache)`` and
``f_backward(grad_out, cache) -> grads``.  Convolutions are 'same'
cross-correlations with zero padding on channel-first arrays
(``(C, H, W)`` for 2D, ``(C, D, H, W)`` for 3D).  The inner loops are
compiled with numba; accumulation order is fixed, so results are
deterministic.
"""

import numba
import numpy as np

from .errors import ArgumentError


@numba.njit(cache=True)
def _corr2d(xp, w, out):
    co, ci, kh, kw = w.shape
    h, wd = out.shape[1], out.shape[2]
    for o in range(co):
        for i in range(ci):
            for a in range(kh):
                for b in range(kw):
                    wv = w[o, i, a, b]
                    if wv == 0.0:
                        continue
                    for y in range(h):
                        for x in range(wd):
                            out[o, y, x] += wv * xp[i, y + a, x + b]


# reassociated sums vectorize; order is still fixed per build
@numba.njit(cache=True, fastmath={"reassoc", "nsz", "arcp", "contract"})
def _corr2d_grad_w(xp, g, gw):
    co, ci, kh, kw = gw.shape
    h, wd = g.shape[1], g.shape[2]
    for o in range(co):
        for i in range(ci):
            for a in range(kh):
                for b in range(kw):
                    acc = 0.0
                    for y in range(h):
                        for x in range(wd):
                            acc += g[o, y, x] * xp[i, y + a, x + b]
                    gw[o, i, a, b] += acc


@numba.njit(cache=True)
def _corr2d_grad_x(g, w, gxp):
    co, ci, kh, kw = w.shape
    h, wd = g.shape[1], g.shape[2]
    for o in range(co):
        for i in range(ci):
            for a in range(kh):
                for b in range(kw):
                    wv = w[o, i, a, b]
                    if wv == 0.0:
                        continue
                    for y in range(h):
                        for x in range(wd):
                            gxp[i, y + a, x + b] += wv * g[o, y, x]


@numba.njit(cache=True)
def _corr3d(xp, w, out):
    co, ci, kd, kh, kw = w.shape
    dd, h, wd = out.shape[1], out.shape[2], out.shape[3]
    for o in range(co):
        for i in range(ci):
            for a in range(kd):
                for b in range(kh):
                    for c in range(kw):
                        wv = w[o, i, a, b, c]
                        if wv == 0.0:
                            continue
                        for z in range(dd):
                            for y in range(h):
                                for x in range(wd):
                                    out[o, z, y, x] += wv * xp[i, z + a, y + b, x + c]


# reassociated sums vectorize; order is still fixed per build
@numba.njit(cache=True, fastmath={"reassoc", "nsz", "arcp", "contract"})
def _corr3d_grad_w(xp, g, gw):
    co, ci, kd, kh, kw = gw.shape
    dd, h, wd = g.shape[1], g.shape[2], g.shape[3]
    for o in range(co):
        for i in range(ci):
            for a in range(kd):
                for b in range(kh):
                    for c in range(kw):
                        acc = 0.0
                        for z in range(dd):
                            for y in range(h):
                                for x in range(wd):
                                    acc += g[o, z, y, x] * xp[i, z + a, y + b, x + c]
                        gw[o, i, a, b, c] += acc


@numba.njit(cache=True)
def _corr3d_grad_x(g, w, gxp):
    co, ci, kd, kh, kw = w.shape
    dd, h, wd = g.shape[1], g.shape[2], g.shape[3]
    for o in range(co):
        for i in range(ci):
            for a in range(kd):
                for b in range(kh):
                    for c in range(kw):
                        wv = w[o, i, a, b, c]
                        if wv == 0.0:
                            continue
                        for z in range(dd):
                            for y in range(h):
                                for x in range(wd):
                                    gxp[i, z + a, y + b, x + c] += wv * g[o, z, y, x]


_KERNELS = {
    2: (_corr2d, _corr2d_grad_w, _corr2d_grad_x),
    3: (_corr3d, _corr3d_grad_w, _corr3d_grad_x),
}


def _conv(x, w, b, ndim):
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != ndim + 1 or w.ndim != ndim + 2:
        raise ArgumentError(f"conv{ndim}d expects input rank {ndim + 1} and weight rank {ndim + 2}")
    if w.shape[1] != x.shape[0]:
        raise ArgumentError(f"weight expects {w.shape[1]} input channels, input has {x.shape[0]}")
    if b.shape != (w.shape[0],):
        raise ArgumentError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")
    ks = w.shape[2:]
    if any(k % 2 == 0 for k in ks):
        raise ArgumentError("kernel sizes must be odd")
    pad = [(0, 0)] + [(k // 2, k // 2) for k in ks]
    xp = np.pad(x, pad)
    out = np.empty((w.shape[0],) + x.shape[1:])
    out[...] = b.reshape((-1,) + (1,) * ndim)
    _KERNELS[ndim][0](xp, w, out)
    return out, (xp, w, x.shape)


def _conv_backward(grad_out, cache, ndim, need_input):
    xp, w, x_shape = cache
    g = np.ascontiguousarray(grad_out, dtype=np.float64)
    gw = np.zeros_like(w)
    _KERNELS[ndim][1](xp, g, gw)
    gb = g.reshape(g.shape[0], -1).sum(axis=1)
    gx = None
    if need_input:
        gxp = np.zeros_like(xp)
        _KERNELS[ndim][2](g, w, gxp)
        crop = (slice(None),) + tuple(slice(k // 2, k // 2 + n) for k, n in zip(w.shape[2:], x_shape[1:]))
        gx = gxp[crop]
    return gx, gw, gb


def conv2d(x, w, b):
    """'Same' 2D cross-correlation: ``(Ci, H, W)`` -> ``(Co, H, W)``."""
    return _conv(x, w, b, 2)


def conv2d_backward(grad_out, cache, need_input=True):
    """Returns ``(grad_x, grad_w, grad_b)``; ``grad_x`` is None when not needed."""
    return _conv_backward(grad_out, cache, 2, need_input)


def conv3d(x, w, b):
    """'Same' 3D cross-correlation: ``(Ci, D, H, W)`` -> ``(Co, D, H, W)``."""
    return _conv(x, w, b, 3)


def conv3d_backward(grad_out, cache, need_input=True):
    return _conv_backward(grad_out, cache, 3, need_input)


def relu(x):
    out = np.maximum(x, 0.0)
    return out, x > 0


def relu_backward(grad_out, cache):
    return grad_out * cache


def avg_pool2(x):
    """2x2 average pooling of ``(C, H, W)``; odd sizes are padded by edge replication."""
    c, h, w = x.shape
    ph, pw = h % 2, w % 2
    xp = np.pad(x, [(0, 0), (0, ph), (0, pw)], mode="edge") if (ph or pw) else x
    out = xp.reshape(c, (h + ph) // 2, 2, (w + pw) // 2, 2).mean(axis=(2, 4))
    return out, (h, w)


def avg_pool2_backward(grad_out, cache):
    h, w = cache
    g = np.repeat(np.repeat(grad_out, 2, axis=1), 2, axis=2) * 0.25
    if g.shape[1] > h:
        g[:, h - 1, :] += g[:, h, :]
        g = g[:, :h, :]
    if g.shape[2] > w:
        g[:, :, w - 1] += g[:, :, w]
        g = g[:, :, :w]
    return g


def upsample_nearest2(x, shape):
    """Nearest-neighbour 2x upsampling of ``(C, h, w)``, cropped to ``shape`` = (H, W)."""
    up = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    return up[:, : shape[0], : shape[1]]


def upsample_nearest2_backward(grad_out, small_shape):
    c = grad_out.shape[0]
    h, w = small_shape
    g = np.zeros((c, 2 * h, 2 * w))
    g[:, : grad_out.shape[1], : grad_out.shape[2]] = grad_out
    return g.reshape(c, h, 2, w, 2).sum(axis=(2, 4))


def he_normal(rng, shape, scale=1.0):
    """He-normal initialisation for a conv weight of shape ``(Co, Ci, *k)``."""
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in) * scale
