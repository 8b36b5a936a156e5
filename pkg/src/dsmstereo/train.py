"""Toy trainer: minimizes the three-term loss on synthetic random-dot pairs."""

import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import losses, matcher
from .errors import ArgumentError, TrainingDiverged, ValidationError
from .matcher import MatcherConfig
from .metrics import compute_metrics, sample_filter, split_metrics
from .optim import AdamState, adam_step
from .params import ParamSet, save_checkpoint
from .synthetic import SyntheticConfig, make_dataset

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "l1_init", "joint", "l1_ref", "total", "epe")


@dataclass(frozen=True)
class TrainConfig:
    matcher: MatcherConfig = field(default_factory=lambda: MatcherConfig(channels=8, regularizer_depth=3))
    height: int = 64
    width: int = 128
    samples: int = 8
    batch_size: int = 1
    epochs: int = 25
    lr: float = 0.001
    lambda_init: float = 1.0
    lambda_joint: float = 1.0
    lambda_refined: float = 1.0
    max_disp: int = 12
    textureless_fraction: float = 0.15
    # epochs after which the learning rate is halved
    lr_milestones: tuple = ()
    d_max: float = losses.DEFAULT_MAX_DISPARITY

    def __post_init__(self):
        if self.samples < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ArgumentError("samples and batch_size must be positive, epochs non-negative")
        if self.lr < 0:
            raise ArgumentError("learning rate must be non-negative")
        if min(self.lambda_init, self.lambda_joint, self.lambda_refined) < 0:
            raise ArgumentError("loss weights must be non-negative")
        if self.max_disp > self.matcher.disparities - 1:
            raise ArgumentError("synthetic max_disp exceeds the matcher's disparity range")

    @property
    def synthetic(self):
        return SyntheticConfig(self.height, self.width, self.max_disp, self.textureless_fraction)


_TRAIN_PARSERS = {
    "height": int, "width": int, "samples": int, "batch_size": int, "epochs": int, "lr": float,
    "lambda_init": float, "lambda_joint": float, "lambda_refined": float, "max_disp": int,
    "textureless_fraction": float, "d_max": float,
    "lr_milestones": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
}
_EXTRA_MATCHER = {"regularizer_depth": int, "refine_matchability": lambda v: v.strip().lower() in ("1", "true", "yes")}
TRAIN_KEYS = matcher.CONFIG_KEYS + tuple(_EXTRA_MATCHER) + tuple(_TRAIN_PARSERS)


def parse_train_config(text):
    values = matcher.parse_key_values(text, TRAIN_KEYS)
    base = TrainConfig()
    mkw = {k: v for k, v in values.items() if k in matcher.CONFIG_KEYS}
    mconf = matcher.config_from_mapping(mkw, base.matcher)
    extra = {}
    for key, parse in _EXTRA_MATCHER.items():
        if key in values:
            extra[key] = parse(values[key])
    if extra:
        mconf = replace(mconf, **extra)
    kwargs = {}
    for key, parse in _TRAIN_PARSERS.items():
        if key in values:
            try:
                kwargs[key] = parse(values[key])
            except ValueError:
                raise ArgumentError(f"bad value for {key}: {values[key]!r}") from None
    return replace(base, matcher=mconf, **kwargs)


def read_train_config(path):
    with open(path) as fh:
        return parse_train_config(fh.read())


def format_train_config(config):
    lines = [matcher.format_config(config.matcher)]
    lines.append(f"regularizer_depth={config.matcher.regularizer_depth}\n")
    lines.append(f"refine_matchability={config.matcher.refine_matchability}\n")
    for f in fields(TrainConfig):
        if f.name in ("matcher",):
            continue
        value = getattr(config, f.name)
        if f.name == "lr_milestones":
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}={value}\n")
    return "".join(lines)


@dataclass
class TrainResult:
    params: ParamSet
    history: list  # one tuple per epoch, see HISTORY_COLUMNS
    steps: list  # one LossBreakdown per optimizer step


def sample_loss(sample, config, params, need_grads=True):
    """Forward pass, loss breakdown and (optionally) parameter gradients for one sample."""
    out, cache = matcher.match(sample.left, sample.right, config.matcher, params, return_cache=True)
    gt = sample.disparity
    mask = losses.valid_mask(gt, config.d_max)
    l1_init = losses.l1_loss(out.disparity_init, gt, mask)
    joint = losses.joint_loss(out.disparity_init, out.logscale, gt, mask)
    l1_ref = losses.l1_loss(out.disparity_refined, gt, mask)
    breakdown = losses.total_loss(l1_init, joint, l1_ref, config.lambda_init, config.lambda_joint,
                                  config.lambda_refined, int(mask.sum()))
    if not need_grads:
        return breakdown, out, None

    g_init = np.zeros_like(gt)
    g_log = g_ref = None
    if config.lambda_init:
        g_init += config.lambda_init * losses.l1_loss_grad(out.disparity_init, gt, mask)
    if config.lambda_joint:
        gd, gb = losses.joint_loss_grad(out.disparity_init, out.logscale, gt, mask)
        g_init += config.lambda_joint * gd
        g_log = config.lambda_joint * gb
    if config.lambda_refined:
        g_ref = config.lambda_refined * losses.l1_loss_grad(out.disparity_refined, gt, mask)
    grads = matcher.match_backward(cache, g_init, g_log, g_ref)
    return breakdown, out, grads


def _epoch_lr(config, epoch):
    halvings = sum(1 for m in config.lr_milestones if epoch >= m)
    return config.lr * 0.5**halvings


def train(config, seed=0, checkpoint_path=None, on_epoch=None):
    """Train from a fresh initialization; deterministic for a given seed.

    Epoch ``e`` (0-based) visits the training set in a seed-determined order,
    taking one Adam step per batch.  When ``checkpoint_path`` is given the
    parameters are written there after every epoch.  A non-finite loss or
    gradient raises :class:`TrainingDiverged` carrying the last good
    parameters.
    """
    params = ParamSet(matcher.init_params(config.matcher, seed))
    params["meta.disparities"] = np.array([float(config.matcher.disparities)])
    data = make_dataset(seed, config.samples, config.synthetic, "train")
    order_rng = np.random.default_rng([seed, 7])
    state = AdamState(lr=config.lr)
    history, steps = [], []
    step = 0

    for epoch in range(config.epochs):
        state.lr = _epoch_lr(config, epoch)
        order = order_rng.permutation(len(data))
        sums = np.zeros(4)
        epes = []
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[start : start + config.batch_size]]
            good = params.copy()
            params.zero_grad()
            parts = np.zeros(4)
            for sample in batch:
                breakdown, out, grads = sample_loss(sample, config, params)
                values = (breakdown.l1_init, breakdown.joint, breakdown.l1_refined, breakdown.total)
                if not np.all(np.isfinite(values)):
                    raise TrainingDiverged(f"non-finite loss at step {step}", good, step)
                parts += values
                params.accumulate(grads, 1.0 / len(batch))
                epes.append(compute_metrics(out.disparity_refined, sample.disparity,
                                            losses.valid_mask(sample.disparity, config.d_max)).epe)
            parts /= len(batch)
            steps.append(losses.total_loss(parts[0], parts[1], parts[2], config.lambda_init,
                                           config.lambda_joint, config.lambda_refined))
            try:
                adam_step(params, state)
            except ValidationError as exc:
                raise TrainingDiverged(str(exc), good, step) from None
            sums += parts
            n_batches += 1
            step += 1
        means = sums / max(n_batches, 1)
        row = (epoch, *map(float, means), float(np.mean(epes)))
        history.append(row)
        log.info("epoch %d: l1_init %.4f joint %.4f l1_ref %.4f total %.4f epe %.4f", *row)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, params)
        if on_epoch is not None:
            on_epoch(row, params)
    return TrainResult(params, history, steps)


def evaluate(params, config, samples):
    """Pooled metrics of the refined disparity over ``samples``, split by ``B' < 0``.

    Samples with fewer than 10% valid pixels are skipped.  Returns the
    report and the per-sample outputs.
    """
    disp, gt, logscale, mask, outputs = [], [], [], [], []
    for sample in samples:
        valid = losses.valid_mask(sample.disparity, config.d_max)
        if not sample_filter(sample.disparity, valid):
            continue
        out = matcher.match(sample.left, sample.right, config.matcher, params)
        outputs.append(out)
        disp.append(out.disparity_refined)
        gt.append(sample.disparity)
        logscale.append(out.logscale)
        mask.append(valid)
    report = split_metrics(np.concatenate(disp), np.concatenate(gt), np.concatenate(logscale), np.concatenate(mask))
    return report, outputs


def write_history(path, history):
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join([str(row[0])] + [repr(v) for v in row[1:]]) + "\n")
