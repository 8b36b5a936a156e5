"""Central finite-difference checks for every differentiable op in the pipeline.

An op is registered as a :class:`DiffOp`: a forward function of one or more
arrays, its backward (upstream gradient plus the same inputs -> one gradient
per input), and a sampler producing a random small instance.  The checker
projects the output onto fixed random weights, so one scalar function is
differentiated per instance.
"""

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers, losses, matcher, refinement, uncertainty
from .errors import ValidationError
from .regression import entropy_backward, entropy_matchability, soft_argmin_backward
from .volume import softmax_over_disparity, softmax_over_disparity_backward, upsample_trilinear, \
    upsample_trilinear_backward

LINEAR_TOL = 1e-5
NONLINEAR_TOL = 1e-3


@dataclass(frozen=True)
class DiffOp:
    name: str
    forward: Callable
    backward: Callable
    sample: Callable
    linear: bool = False
    eps: float = 1e-4
    # only the first ``wrt`` inputs are differentiated (None = all)
    wrt: int = None
    # per input, check at most this many randomly chosen coordinates (None = all)
    max_coords: int = None

    @property
    def tolerance(self):
        return LINEAR_TOL if self.linear else NONLINEAR_TOL


def grad_check(op, inputs, eps=None, seed=0):
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    eps = op.eps if eps is None else eps
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out = np.asarray(op.forward(*inputs), dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{op.name}: forward output is not finite")
    weights = rng.standard_normal(out.shape)
    analytic = op.backward(weights, *inputs)

    def scalar(args):
        value = np.asarray(op.forward(*args), dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValidationError(f"{op.name}: forward output is not finite")
        return float((weights * value).sum())

    worst = 0.0
    n_diff = len(inputs) if op.wrt is None else op.wrt
    for k, x in enumerate(inputs[:n_diff]):
        grad = np.asarray(analytic[k], dtype=np.float64)
        if grad.shape != x.shape:
            raise ValidationError(f"{op.name}: gradient {k} has shape {grad.shape}, input has {x.shape}")
        flat = x.reshape(-1)
        coords = range(flat.size)
        if op.max_coords is not None and flat.size > op.max_coords:
            coords = rng.choice(flat.size, op.max_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            plus = scalar(inputs)
            flat[idx] = orig - eps
            minus = scalar(inputs)
            flat[idx] = orig
            numeric = (plus - minus) / (2 * eps)
            a = grad.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# -- registry ---------------------------------------------------------------------

OPS = {}


def register(op):
    OPS[op.name] = op
    return op


def _simplex(rng, d, h, w, floor=0.02):
    p = rng.uniform(floor, 1.0, size=(d, h, w))
    return p / p.sum(axis=0, keepdims=True)


def _dims(rng):
    return int(rng.integers(2, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 6))


TEMPERATURE = 0.7

register(DiffOp(
    "softmax",
    lambda c: softmax_over_disparity(c, TEMPERATURE),
    lambda g, c: (softmax_over_disparity_backward(softmax_over_disparity(c, TEMPERATURE), g, TEMPERATURE),),
    lambda rng: (rng.standard_normal(_dims(rng)) * 2,),
))

register(DiffOp(
    "soft_argmin",
    # unchecked expectation: finite-difference probes leave the simplex
    lambda p: (p * np.arange(p.shape[0])[:, None, None]).sum(axis=0),
    lambda g, p: (soft_argmin_backward(p, g),),
    lambda rng: (_simplex(rng, *_dims(rng)),),
    linear=True,
))

register(DiffOp(
    "entropy",
    entropy_matchability,
    lambda g, p: (entropy_backward(p, g),),
    lambda rng: (_simplex(rng, *_dims(rng)),),
    eps=1e-6,
))


def _unc_sample(rng):
    h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    p = uncertainty.init_params(rng)
    p["uncertainty.conv1.b"] = rng.standard_normal(8) * 0.1
    p["uncertainty.conv2.w"] = rng.standard_normal((1, 8, 3, 3)) * 0.3
    return (rng.uniform(0, 2, (h, w)),) + tuple(p[k] for k in _UNC_KEYS)


_UNC_KEYS = ("uncertainty.conv1.w", "uncertainty.conv1.b", "uncertainty.conv2.w", "uncertainty.conv2.b")


def _unc_forward(m, *ps):
    return uncertainty.matchability_to_logscale(m, dict(zip(_UNC_KEYS, ps)))


def _unc_backward(g, m, *ps):
    _, cache = uncertainty.matchability_to_logscale(m, dict(zip(_UNC_KEYS, ps)), return_cache=True)
    gm, grads = uncertainty.matchability_to_logscale_backward(g, cache)
    return (gm,) + tuple(grads[k] for k in _UNC_KEYS)


register(DiffOp("uncertainty_map", _unc_forward, _unc_backward, _unc_sample, eps=1e-6))


def _l1_sample(rng):
    d, _, gt, m = _loss_sample(rng)
    return d, gt, m


def _loss_sample(rng):
    h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    gt = rng.uniform(0, 10, (h, w))
    err = rng.uniform(0.05, 3, (h, w)) * rng.choice([-1, 1], (h, w))
    mask = (rng.uniform(size=(h, w)) < 0.8).astype(float)
    mask.flat[0] = 1.0
    return gt + err, rng.uniform(-2, 2, (h, w)), gt, mask


register(DiffOp(
    "joint_loss",
    lambda d, b, gt, m: losses.joint_loss(d, b, gt, m),
    lambda g, d, b, gt, m: tuple(x * g for x in losses.joint_loss_grad(d, b, gt, m)) + (np.zeros_like(gt), np.zeros_like(m)),
    _loss_sample,
    eps=1e-6,
    wrt=2,
))

register(DiffOp(
    "l1_loss",
    lambda d, gt, m: losses.l1_loss(d, gt, m),
    lambda g, d, gt, m: (losses.l1_loss_grad(d, gt, m) * g, np.zeros_like(gt), np.zeros_like(m)),
    _l1_sample,
    linear=True,
    wrt=1,
))


def _conv_sample(rng, ndim):
    ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    spatial = tuple(int(rng.integers(2, 5)) for _ in range(ndim))
    return (rng.standard_normal((ci,) + spatial), rng.standard_normal((co, ci) + (3,) * ndim), rng.standard_normal(co))


register(DiffOp(
    "conv2d",
    lambda x, w, b: layers.conv2d(x, w, b)[0],
    lambda g, x, w, b: layers.conv2d_backward(g, layers.conv2d(x, w, b)[1]),
    lambda rng: _conv_sample(rng, 2),
    linear=True,
))


register(DiffOp(
    "conv3d",
    lambda x, w, b: layers.conv3d(x, w, b)[0],
    lambda g, x, w, b: layers.conv3d_backward(g, layers.conv3d(x, w, b)[1]),
    lambda rng: _conv_sample(rng, 3),
    linear=True,
))


def _kernels_sample(rng, h, w, nonneg=False):
    raw = rng.uniform(0 if nonneg else -0.6, 0.6, (h, w, 3, 3))
    return refinement.normalize_affinities(raw)


register(DiffOp(
    "cspn_step",
    refinement.cspn_step,
    lambda g, d, k: refinement.cspn_step_backward(g, d, k),
    lambda rng: (lambda h, w: (rng.uniform(0, 10, (h, w)), _kernels_sample(rng, h, w)))(
        int(rng.integers(2, 7)), int(rng.integers(2, 7))),
    linear=True,
))


# -- composite checks beyond the per-op suite -----------------------------------------

def _norm_sample(rng):
    h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    raw = rng.uniform(-0.8, 0.8, (h, w, 3, 3))
    return (raw,)


register(DiffOp(
    "normalize_affinities",
    refinement.normalize_affinities,
    lambda g, raw: (refinement.normalize_affinities_backward(g, raw),),
    _norm_sample,
    eps=1e-6,
))


def _refine_forward(d0, raw, iters):
    return refinement.cspn_refine(d0, refinement.normalize_affinities(raw), int(iters[0]))


def _refine_backward(g, d0, raw, iters):
    kernels = refinement.normalize_affinities(raw)
    _, cache = refinement.cspn_refine(d0, kernels, int(iters[0]), return_cache=True)
    gd, gk = refinement.cspn_refine_backward(g, cache)
    return gd, refinement.normalize_affinities_backward(gk, raw), np.zeros(1)


def _refine_sample(rng):
    h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    return rng.uniform(0, 10, (h, w)), rng.uniform(-0.8, 0.8, (h, w, 3, 3)), np.array([float(rng.integers(1, 5))])


register(DiffOp("cspn_refine", _refine_forward, _refine_backward, _refine_sample, eps=1e-6, wrt=2))

register(DiffOp(
    "upsample",
    lambda v: upsample_trilinear(v, 2),
    lambda g, v: (upsample_trilinear_backward(g, 2),),
    lambda rng: (rng.standard_normal(_dims(rng)),),
    linear=True,
))


def _kernelnet_sample(rng):
    h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
    params = refinement.init_params(rng)
    params["kernel.conv4.w"] = rng.standard_normal(params["kernel.conv4.w"].shape) * 0.2
    for n in (1, 2, 3):
        params[f"kernel.conv{n}.b"] = rng.standard_normal(params[f"kernel.conv{n}.b"].shape) * 0.1
    maps = (rng.uniform(0, 7, (h, w)), rng.uniform(0, 1, (h, w)), rng.uniform(0, 2, (h, w)))
    return maps + tuple(params[k] for k in _KNET_KEYS)


_KNET_KEYS = tuple(f"kernel.conv{n}.{t}" for n in (1, 2, 3, 4) for t in ("w", "b"))


def _knet_forward(d, img, m, *ps):
    return refinement.extract_diffusion_kernels(d, img, m, dict(zip(_KNET_KEYS, ps)), 8)


def _knet_backward(g, d, img, m, *ps):
    _, cache = refinement.extract_diffusion_kernels(d, img, m, dict(zip(_KNET_KEYS, ps)), 8, return_cache=True)
    gd, gi, gm, grads = refinement.extract_diffusion_kernels_backward(g, cache)
    return (gd, gi, gm) + tuple(grads[k] for k in _KNET_KEYS)


register(DiffOp("kernel_net", _knet_forward, _knet_backward, _kernelnet_sample, eps=1e-6, max_coords=40))


def _reg_sample(rng):
    raw = rng.uniform(0, 1, (2, 4, 3, 3))
    params = matcher.init_regularizer_params(rng, 2, 3)
    for n in (1, 2):
        params[f"regularizer.conv{n}.b"] = rng.standard_normal(8) * 0.1
    return (raw,) + tuple(params[k] for k in _REG_KEYS)


_REG_KEYS = tuple(f"regularizer.conv{n}.{t}" for n in (1, 2, 3) for t in ("w", "b"))


def _reg_forward(raw, *ps):
    return matcher.regularize(raw, dict(zip(_REG_KEYS, ps)))


def _reg_backward(g, raw, *ps):
    _, caches = matcher.regularize(raw, dict(zip(_REG_KEYS, ps)), return_cache=True)
    graw, grads = matcher.regularize_backward(g, caches, need_input=True)
    return (graw,) + tuple(grads[k] for k in _REG_KEYS)


register(DiffOp("regularizer", _reg_forward, _reg_backward, _reg_sample, eps=1e-6, max_coords=60))

# ops named in the acceptance gradient suite
CORE_OPS = ("softmax", "soft_argmin", "entropy", "uncertainty_map", "joint_loss", "l1_loss",
            "conv2d", "conv3d", "cspn_step")


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    trials: int
    seconds: float

    @property
    def passed(self):
        return self.max_error < self.tolerance


def run_suite(names=None, trials=20, seed=0):
    """Check each named op on ``trials`` random instances."""
    results = []
    for name in names or list(OPS):
        op = OPS[name]
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        start = time.perf_counter()
        worst = 0.0
        for trial in range(trials):
            worst = max(worst, grad_check(op, op.sample(rng), seed=trial))
        results.append(CheckResult(name, worst, op.tolerance, trials, time.perf_counter() - start))
    return results
