"""Random-dot stereo pairs with exact integer ground truth.

The left view is i.i.d. uniform noise.  Its disparity field is a background
ramp (quantized to whole pixels) with a few fronto-parallel rectangles in
front of it.  The right view is rendered by sending every left pixel ``x`` to
``x - d(x)`` with a z-buffer (larger disparity = nearer wins); right pixels
nothing lands on are filled with fresh noise.  Hence for every left pixel
that is not occluded, ``right[y, x - d] == left[y, x]`` exactly.

Textureless regions are rectangles of the left view flattened to a single
intensity before rendering, so they stay geometrically consistent but carry
no photometric signal.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 64
    width: int = 128
    max_disp: int = 12
    textureless_fraction: float = 0.0
    # if set, the whole field is this one disparity (no layers)
    constant_disparity: int = None
    max_layers: int = 3

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ArgumentError("synthetic images must be at least 8x8")
        if not 0 <= self.max_disp < self.width / 4:
            raise ArgumentError(f"max_disp must be in [0, width/4), got {self.max_disp} for width {self.width}")
        if not 0.0 <= self.textureless_fraction < 1.0:
            raise ArgumentError("textureless_fraction must be in [0, 1)")
        if self.constant_disparity is not None and not 0 <= self.constant_disparity <= self.max_disp:
            raise ArgumentError("constant_disparity must lie in [0, max_disp]")


@dataclass(frozen=True)
class SyntheticSample:
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray
    occlusion: np.ndarray
    textureless: np.ndarray
    seed: int


def _rect(rng, h, w, min_frac, max_frac):
    rh = int(rng.integers(max(2, int(h * min_frac)), max(3, int(h * max_frac)) + 1))
    rw = int(rng.integers(max(2, int(w * min_frac)), max(3, int(w * max_frac)) + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    x0 = int(rng.integers(0, w - rw + 1))
    return slice(y0, y0 + rh), slice(x0, x0 + rw)


def _disparity_field(rng, cfg):
    h, w = cfg.height, cfg.width
    if cfg.constant_disparity is not None:
        return np.full((h, w), float(cfg.constant_disparity))
    top = cfg.max_disp
    lo = int(rng.integers(0, top // 3 + 1))
    hi = int(rng.integers(lo, max(lo, top // 2) + 1))
    if rng.uniform() < 0.5:
        t = np.linspace(0.0, 1.0, w)[None, :].repeat(h, axis=0)
    else:
        t = np.linspace(0.0, 1.0, h)[:, None].repeat(w, axis=1)
    disp = np.round(lo + (hi - lo) * t)
    for _ in range(int(rng.integers(1, cfg.max_layers + 1))):
        if hi + 1 > top:
            break
        ys, xs = _rect(rng, h, w, 0.15, 0.4)
        disp[ys, xs] = float(rng.integers(hi + 1, top + 1))
    return disp


def render_right(left, disp, rng):
    """Right view, occlusion mask and hole mask from a left view and its disparity."""
    h, w = left.shape
    xs = np.arange(w)
    right = np.empty_like(left)
    occluded = np.zeros((h, w), dtype=bool)
    for y in range(h):
        d = disp[y].astype(int)
        target = xs - d
        inside = target >= 0
        zbuf = np.full(w, -1)
        np.maximum.at(zbuf, target[inside], d[inside])
        visible = inside & (d >= zbuf[np.maximum(target, 0)])
        occluded[y] = ~visible
        row = rng.uniform(0.0, 1.0, w)
        row[target[visible]] = left[y, visible]
        right[y] = row
    return right, occluded


def gen_synthetic_pair(seed, config=None):
    """Generate one :class:`SyntheticSample`; identical seeds give identical samples."""
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    h, w = cfg.height, cfg.width
    left = rng.uniform(0.0, 1.0, (h, w))
    disp = _disparity_field(rng, cfg)

    textureless = np.zeros((h, w), dtype=bool)
    target = cfg.textureless_fraction * h * w
    tries = 0
    while textureless.sum() < target and tries < 100:
        ys, xs = _rect(rng, h, w, 0.1, 0.3)
        left[ys, xs] = rng.uniform(0.2, 0.8)
        textureless[ys, xs] = True
        tries += 1

    right, occluded = render_right(left, disp, rng)
    return SyntheticSample(left, right, disp, occluded.astype(np.float64), textureless.astype(np.float64), int(seed))


def sample_seeds(seed, count, split="train"):
    """Disjoint, reproducible per-sample seeds for a named split."""
    split_id = {"train": 0, "test": 1}.get(split, 2)
    seq = np.random.SeedSequence([int(seed), split_id])
    return [int(s.generate_state(1)[0]) for s in seq.spawn(count)]


def make_dataset(seed, count, config=None, split="train"):
    return [gen_synthetic_pair(s, config) for s in sample_seeds(seed, count, split)]
