"""Static figures for the CLI: match panels, training curves, error maps."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .train import HISTORY_COLUMNS  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def match_figure(path, left, output, disparities):
    """Left image, initial disparity, matchability and refined disparity side by side."""
    panels = [
        ("left", left, "gray", (0.0, 1.0)),
        ("initial disparity", output.disparity_init, "viridis", (0, disparities - 1)),
        ("matchability (nats)", output.matchability, "magma", (0.0, float(np.log(disparities)))),
        ("refined disparity", output.disparity_refined, "viridis", (0, disparities - 1)),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(10, 4.5))
    for ax, (title, img, cmap, (lo, hi)) in zip(axes.flat, panels):
        im = ax.imshow(img, cmap=cmap, vmin=lo, vmax=hi)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.025)
    return _save(fig, path)


def history_figure(path, history):
    """Per-epoch loss terms and training EPE."""
    rows = np.asarray(history, dtype=float)
    fig, (ax_loss, ax_epe) = plt.subplots(1, 2, figsize=(10, 3.5))
    for col in range(1, 5):
        ax_loss.plot(rows[:, 0], rows[:, col], label=HISTORY_COLUMNS[col])
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_epe.plot(rows[:, 0], rows[:, 5], color="k")
    ax_epe.set_xlabel("epoch")
    ax_epe.set_ylabel("train EPE (px)")
    return _save(fig, path)


def error_figure(path, pred, gt, mask, logscale=None):
    err = np.where(mask, np.abs(pred - gt), np.nan)
    n = 2 if logscale is None else 3
    fig, axes = plt.subplots(1, n, figsize=(4.5 * n, 3))
    im = axes[0].imshow(err, cmap="inferno", vmin=0, vmax=max(3.0, float(np.nanmax(err)) if np.any(mask) else 3.0))
    axes[0].set_title("|error| (px)", fontsize=9)
    fig.colorbar(im, ax=axes[0], fraction=0.025)
    finite = err[np.isfinite(err)]
    axes[1].hist(finite, bins=50, color="0.3")
    axes[1].set_yscale("log")
    axes[1].set_xlabel("|error| (px)")
    if logscale is not None:
        im = axes[2].imshow(logscale < 0, cmap="gray")
        axes[2].set_title("matchable (B' < 0)", fontsize=9)
    for ax in (axes[0],) + ((axes[2],) if logscale is not None else ()):
        ax.axis("off")
    return _save(fig, path)
