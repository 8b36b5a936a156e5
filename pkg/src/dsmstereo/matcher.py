"""Matching frontend and the end-to-end pipeline.

Pipeline: features -> cost volume -> (optional) 3D regularizer -> softmax ->
{soft-argmin disparity, entropy matchability} -> log-scale map ->
diffusion kernels -> propagation refinement.

``match`` runs the forward pass; with ``return_cache=True`` it also returns
what ``match_backward`` needs to push loss gradients back to every learnable
parameter.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import layers, refinement, uncertainty
from .errors import ArgumentError
from .regression import entropy_backward, entropy_matchability, soft_argmin, soft_argmin_backward
from .volume import (
    softmax_over_disparity,
    softmax_over_disparity_backward,
    upsample_trilinear,
    upsample_trilinear_backward,
)

SENTINEL_COST = 1e4
REGULARIZER_WIDTH = 8
COST_MODES = ("concat", "absdiff")
FEATURE_MODES = ("learned", "census")
CONFIG_KEYS = ("disparities", "stride", "cost_mode", "feature_mode", "channels", "temperature", "refine_iters")


@dataclass(frozen=True)
class MatcherConfig:
    disparities: int = 16
    stride: int = 1
    cost_mode: str = "absdiff"
    feature_mode: str = "census"
    channels: int = 24
    temperature: float = 1.0
    refine_iters: int = refinement.DEFAULT_ITERATIONS
    # 0 = use the absdiff cost directly; otherwise number of 3D conv layers
    regularizer_depth: int = 0
    refine_matchability: bool = True

    def __post_init__(self):
        if self.disparities < 2:
            raise ArgumentError("disparities must be at least 2")
        if self.stride not in (1, 2):
            raise ArgumentError(f"stride must be 1 or 2, got {self.stride}")
        if self.cost_mode not in COST_MODES:
            raise ArgumentError(f"cost_mode must be one of {COST_MODES}")
        if self.feature_mode not in FEATURE_MODES:
            raise ArgumentError(f"feature_mode must be one of {FEATURE_MODES}")
        if self.channels < 1:
            raise ArgumentError("channels must be positive")
        if self.feature_mode == "census":
            census_window(self.channels)
        if not self.temperature > 0:
            raise ArgumentError("temperature must be positive")
        if self.refine_iters < 0:
            raise ArgumentError("refine_iters must be non-negative")
        if self.regularizer_depth == 1 or self.regularizer_depth < 0:
            raise ArgumentError("regularizer_depth must be 0 or at least 2")
        if self.cost_mode == "concat" and self.regularizer_depth == 0:
            raise ArgumentError("concat cost volumes need a regularizer (regularizer_depth >= 2)")

    @property
    def regularizer_channels(self):
        return 2 * self.channels if self.cost_mode == "concat" else self.channels


_PARSERS = {"disparities": int, "stride": int, "channels": int, "refine_iters": int, "temperature": float,
            "cost_mode": str, "feature_mode": str}


def parse_key_values(text, allowed):
    """Parse ``key=value`` lines; ``#`` starts a comment.  Unknown keys are an error."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise ArgumentError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def config_from_mapping(values, base=None):
    kwargs = {}
    for key, value in values.items():
        try:
            kwargs[key] = _PARSERS[key](value)
        except ValueError:
            raise ArgumentError(f"bad value for {key}: {value!r}") from None
    base = base or MatcherConfig()
    if kwargs.get("cost_mode", base.cost_mode) == "concat" and base.regularizer_depth == 0:
        kwargs["regularizer_depth"] = 3
    return replace(base, **kwargs)


def parse_config(text):
    return config_from_mapping(parse_key_values(text, CONFIG_KEYS))


def read_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(config):
    return "".join(f"{key}={getattr(config, key)}\n" for key in CONFIG_KEYS)


# -- features -------------------------------------------------------------------


def census_window(channels):
    window = int(round(np.sqrt(channels + 1)))
    if window * window - 1 != channels or window % 2 == 0:
        raise ArgumentError(f"census features need channels = w*w - 1 for odd w, got {channels}")
    return window


def normalize_intensity(image):
    """Zero mean, unit variance (a flat image only gets its mean removed)."""
    image = np.asarray(image, dtype=np.float64)
    centred = image - image.mean()
    std = centred.std()
    return centred / std if std > 0 else centred


def census_transform(image, window=5):
    """Binary census descriptor: one channel per non-centre window position.

    Channel order is row-major over window offsets, skipping the centre; a bit
    is 1 where the neighbour is strictly brighter than the centre.  Borders are
    edge-replicated.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ArgumentError("census transform expects a 2D image")
    h, w = image.shape
    if h < window or w < window:
        raise ArgumentError(f"image {image.shape} is smaller than the {window}x{window} census window")
    r = window // 2
    padded = np.pad(image, r, mode="edge")
    out = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            out.append(padded[r + dy : r + dy + h, r + dx : r + dx + w] > image)
    return np.stack(out).astype(np.float64)


def init_feature_params(rng, channels):
    return {
        "features.conv1.w": layers.he_normal(rng, (channels, 1, 3, 3)),
        "features.conv1.b": np.zeros(channels),
        "features.conv2.w": layers.he_normal(rng, (channels, channels, 3, 3)),
        "features.conv2.b": np.zeros(channels),
    }


def extract_features(image, config, params=None, return_cache=False):
    """Features ``(C, H, W)`` of one view at full resolution.

    Learned mode normalizes intensity, then applies two 3x3 conv + rectifier
    layers.  Census mode is parameter-free.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ArgumentError(f"expected a 2D luminance image, got shape {image.shape}")
    if config.feature_mode == "census":
        feats = census_transform(normalize_intensity(image), census_window(config.channels))
        return (feats, None) if return_cache else feats
    if min(image.shape) < 5:
        raise ArgumentError(f"image {image.shape} is smaller than the 5x5 receptive field")
    x = normalize_intensity(image)[None]
    z1, c1 = layers.conv2d(x, params["features.conv1.w"], params["features.conv1.b"])
    a1, r1 = layers.relu(z1)
    z2, c2 = layers.conv2d(a1, params["features.conv2.w"], params["features.conv2.b"])
    a2, r2 = layers.relu(z2)
    return (a2, (c1, r1, c2, r2)) if return_cache else a2


def extract_features_backward(grad_feats, cache):
    c1, r1, c2, r2 = cache
    g = layers.relu_backward(grad_feats, r2)
    ga1, gw2, gb2 = layers.conv2d_backward(g, c2)
    g = layers.relu_backward(ga1, r1)
    _, gw1, gb1 = layers.conv2d_backward(g, c1, need_input=False)
    return {"features.conv1.w": gw1, "features.conv1.b": gb1, "features.conv2.w": gw2, "features.conv2.b": gb2}


# -- cost volume ------------------------------------------------------------------


def _check_pair(fl, fr, disparities, stride):
    fl = np.asarray(fl, dtype=np.float64)
    fr = np.asarray(fr, dtype=np.float64)
    if fl.shape != fr.shape or fl.ndim != 3:
        raise ArgumentError(f"feature maps must share a (C, H, W) shape, got {fl.shape} and {fr.shape}")
    if disparities > fl.shape[2]:
        raise ArgumentError(f"{disparities} disparities exceed image width {fl.shape[2]}")
    if fl.shape[1] % stride or fl.shape[2] % stride:
        raise ArgumentError(f"image size {fl.shape[1:]} is not divisible by stride {stride}")
    return fl, fr


def feature_volume(fl, fr, disparities, mode, stride=1):
    """Per-channel raw volume ``(K, D, H/s, W/s)`` and its validity mask ``(D, H/s, W/s)``.

    Left pixel ``(x, y)`` at disparity ``d`` pairs with right pixel ``(x - d, y)``,
    positions on the full-resolution grid.  ``absdiff`` gives ``K = C``
    channels ``|Fl - Fr|``; ``concat`` gives ``K = 2C`` channels ``[Fl, Fr]``.
    Out-of-range pairs (``x - d < 0``) are zero and flagged invalid.
    """
    fl, fr = _check_pair(fl, fr, disparities, stride)
    c, h, w = fl.shape
    left = fl[:, ::stride, ::stride]
    right_rows = fr[:, ::stride, :]
    xs = np.arange(0, w, stride)
    k = c if mode == "absdiff" else 2 * c
    raw = np.zeros((k, disparities) + left.shape[1:])
    valid = np.zeros((disparities,) + left.shape[1:], dtype=bool)
    for d in range(disparities):
        src = xs - d
        ok = src >= 0
        valid[d][:, ok] = True
        shifted = right_rows[:, :, np.maximum(src, 0)] * ok
        if mode == "absdiff":
            raw[:, d] = np.abs(left - shifted) * ok
        else:
            raw[:c, d] = left * ok
            raw[c:, d] = shifted
    return raw, valid


def feature_volume_backward(grad_raw, fl, fr, mode, stride=1):
    """Returns ``(grad_fl, grad_fr)`` at full resolution."""
    c, h, w = fl.shape
    disparities = grad_raw.shape[1]
    left = fl[:, ::stride, ::stride]
    right_rows = fr[:, ::stride, :]
    xs = np.arange(0, w, stride)
    g_left = np.zeros_like(left)
    g_right_rows = np.zeros_like(right_rows)
    for d in range(disparities):
        src = xs - d
        ok = src >= 0
        idx = np.maximum(src, 0)
        if mode == "absdiff":
            shifted = right_rows[:, :, idx] * ok
            g = grad_raw[:, d] * np.sign(left - shifted) * ok
            g_left += g
            np.add.at(g_right_rows, (slice(None), slice(None), idx[ok]), -g[:, :, ok])
        else:
            g_left += grad_raw[:c, d] * ok
            np.add.at(g_right_rows, (slice(None), slice(None), idx[ok]), grad_raw[c:, d][:, :, ok])
    g_fl = np.zeros_like(fl)
    g_fr = np.zeros_like(fr)
    g_fl[:, ::stride, ::stride] = g_left
    g_fr[:, ::stride, :] = g_right_rows
    return g_fl, g_fr


def build_cost_volume(fl, fr, disparities, mode="absdiff", stride=1):
    """Cost volume from two feature maps.

    ``absdiff`` returns scalar costs ``(D, H/s, W/s)``, the L1 distance between
    feature vectors, with :data:`SENTINEL_COST` where ``x - d < 0``.
    ``concat`` returns the ``(2C, D, H/s, W/s)`` raw volume for the regularizer.
    """
    if mode not in COST_MODES:
        raise ArgumentError(f"unknown cost mode {mode!r}")
    raw, valid = feature_volume(fl, fr, disparities, mode, stride)
    if mode == "concat":
        return raw
    return np.where(valid, raw.sum(axis=0), SENTINEL_COST)


# -- regularizer -----------------------------------------------------------------


def init_regularizer_params(rng, in_channels, depth=3, passthrough=False):
    """3D conv stack ``in -> 8 -> ... -> 8 -> 1``.

    ``passthrough`` starts the stack close to the identity on the channel sum
    (the absdiff cost) with small random side paths, so an untrained
    regularizer already behaves like the plain absdiff matcher.
    """
    widths = [in_channels] + [REGULARIZER_WIDTH] * (depth - 1) + [1]
    params = {}
    for n, (ci, co) in enumerate(zip(widths[:-1], widths[1:]), 1):
        w = layers.he_normal(rng, (co, ci, 3, 3, 3), scale=0.1 if passthrough else 1.0)
        if passthrough:
            w[0] = 0.0
            w[0, :, 1, 1, 1] = 1.0 if n == 1 else 0.0
            if n > 1:
                w[0, 0, 1, 1, 1] = 1.0
        params[f"regularizer.conv{n}.w"] = w
        params[f"regularizer.conv{n}.b"] = np.zeros(co)
    return params


def regularizer_depth_of(params):
    n = 0
    while f"regularizer.conv{n + 1}.w" in params:
        n += 1
    return n


def regularize(raw, params, return_cache=False):
    """Scalar cost volume ``(D, H, W)`` from a raw ``(K, D, H, W)`` volume."""
    raw = np.asarray(raw, dtype=np.float64)
    depth = regularizer_depth_of(params)
    if depth == 0:
        raise ArgumentError("no regularizer parameters given")
    if raw.ndim != 4 or raw.shape[0] != params["regularizer.conv1.w"].shape[1]:
        raise ArgumentError(
            f"raw volume {raw.shape} does not match regularizer input of {params['regularizer.conv1.w'].shape[1]} channels")
    x = raw
    caches = []
    for n in range(1, depth + 1):
        x, cc = layers.conv3d(x, params[f"regularizer.conv{n}.w"], params[f"regularizer.conv{n}.b"])
        rc = None
        if n < depth:
            x, rc = layers.relu(x)
        caches.append((cc, rc))
    out = x[0]
    return (out, caches) if return_cache else out


def regularize_backward(grad_cost, caches, need_input=False):
    """Returns ``(grad_raw or None, param_grads)``."""
    grads = {}
    g = np.asarray(grad_cost)[None]
    for n in range(len(caches), 0, -1):
        cc, rc = caches[n - 1]
        if rc is not None:
            g = layers.relu_backward(g, rc)
        g, gw, gb = layers.conv3d_backward(g, cc, need_input=(n > 1 or need_input))
        grads[f"regularizer.conv{n}.w"] = gw
        grads[f"regularizer.conv{n}.b"] = gb
    return g, grads


# -- pipeline ----------------------------------------------------------------------


@dataclass
class MatchOutput:
    disparity_init: np.ndarray
    matchability: np.ndarray
    logscale: np.ndarray
    disparity_refined: np.ndarray
    probability: Optional[np.ndarray] = None


def init_params(config, seed=0):
    """Fresh parameters for every learnable stage ``config`` uses."""
    rng = np.random.default_rng(seed)
    params = {}
    if config.feature_mode == "learned":
        params.update(init_feature_params(rng, config.channels))
    if config.regularizer_depth:
        params.update(init_regularizer_params(
            rng, config.regularizer_channels, config.regularizer_depth, passthrough=config.cost_mode == "absdiff"))
    params.update(uncertainty.init_params(rng))
    params.update(refinement.init_params(rng))
    return params


def _luminance(image):
    image = np.asarray(image, dtype=np.float64)
    return image.mean(axis=2) if image.ndim == 3 else image


def match(left, right, config, params, retain_volume=False, return_cache=False):
    """Run the full pipeline on a rectified pair of ``[0, 1]`` images."""
    left = _luminance(left)
    right = _luminance(right)
    if left.shape != right.shape:
        raise ArgumentError(f"left {left.shape} and right {right.shape} images differ in size")
    s = config.stride
    fl, cfl = extract_features(left, config, params, return_cache=True)
    fr, cfr = extract_features(right, config, params, return_cache=True)

    reg_cache = None
    if config.regularizer_depth:
        raw, valid = feature_volume(fl, fr, config.disparities, config.cost_mode, s)
        cost, reg_cache = regularize(raw, params, return_cache=True)
        cost = np.where(valid, cost, SENTINEL_COST)
    else:
        cost = build_cost_volume(fl, fr, config.disparities, config.cost_mode, s)
        valid = cost < SENTINEL_COST
    if s > 1:
        cost = upsample_trilinear(cost, s, kind="cost")
    prob = softmax_over_disparity(cost, config.temperature)
    disp = soft_argmin(prob)
    match_map = entropy_matchability(prob)
    logscale, unc_cache = uncertainty.matchability_to_logscale(match_map, params, return_cache=True)
    raw_k, k_cache = refinement.extract_diffusion_kernels(
        disp, left, match_map, params, config.disparities, config.refine_matchability, return_cache=True)
    kernels = refinement.normalize_affinities(raw_k)
    refined, cspn_cache = refinement.cspn_refine(disp, kernels, config.refine_iters, return_cache=True)

    out = MatchOutput(disp, match_map, logscale, refined, prob if retain_volume else None)
    if not return_cache:
        return out
    cache = dict(config=config, fl=fl, fr=fr, cfl=cfl, cfr=cfr, valid=valid, reg_cache=reg_cache, prob=prob,
                 unc_cache=unc_cache, raw_k=raw_k, k_cache=k_cache, cspn_cache=cspn_cache)
    return out, cache


def _accumulate(grads, new):
    for key, value in new.items():
        grads[key] = grads[key] + value if key in grads else value


def match_backward(cache, grad_init=None, grad_logscale=None, grad_refined=None):
    """Parameter gradients given loss gradients w.r.t. the three output maps.

    Any gradient may be None (that loss term is off).
    """
    config = cache["config"]
    prob = cache["prob"]
    shape = prob.shape[1:]
    grads = {}
    g_disp = np.zeros(shape) if grad_init is None else np.array(grad_init, dtype=np.float64)
    g_match = np.zeros(shape)

    if grad_refined is not None:
        g_d0, g_kernels = refinement.cspn_refine_backward(grad_refined, cache["cspn_cache"])
        g_raw_k = refinement.normalize_affinities_backward(g_kernels, cache["raw_k"])
        g_kd, _, g_km, kgrads = refinement.extract_diffusion_kernels_backward(g_raw_k, cache["k_cache"])
        g_disp += g_d0 + g_kd
        g_match += g_km
        _accumulate(grads, kgrads)

    if grad_logscale is not None:
        g_m, ugrads = uncertainty.matchability_to_logscale_backward(grad_logscale, cache["unc_cache"])
        g_match += g_m
        _accumulate(grads, ugrads)

    learned_features = config.feature_mode == "learned"
    if not (config.regularizer_depth or learned_features):
        return grads

    g_prob = soft_argmin_backward(prob, g_disp) + entropy_backward(prob, g_match)
    g_cost = softmax_over_disparity_backward(prob, g_prob, config.temperature)
    if config.stride > 1:
        g_cost = upsample_trilinear_backward(g_cost, config.stride)
    g_cost = np.where(cache["valid"], g_cost, 0.0)

    if config.regularizer_depth:
        g_raw, rgrads = regularize_backward(g_cost, cache["reg_cache"], need_input=learned_features)
        _accumulate(grads, rgrads)
    else:
        # absdiff without regularizer: cost = sum over channels of the raw volume
        g_raw = np.broadcast_to(g_cost, (config.channels,) + g_cost.shape)

    if learned_features:
        g_fl, g_fr = feature_volume_backward(g_raw, cache["fl"], cache["fr"], config.cost_mode, config.stride)
        _accumulate(grads, extract_features_backward(g_fl, cache["cfl"]))
        _accumulate(grads, extract_features_backward(g_fr, cache["cfr"]))
    return grads
