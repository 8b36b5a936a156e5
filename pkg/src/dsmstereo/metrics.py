"""Disparity benchmark metrics.

Sums run sequentially over valid pixels in row-major order, in double
precision, so a plain per-pixel loop reproduces every value bit for bit.
Thresholds are strict: a pixel is bad at ">N px" when its error exceeds N;
it is D1-bad when its error exceeds both 3 px and 5% of the ground truth.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInputError
from .volume import check_same_shape

FIELDS = ("epe", "pct_gt1", "pct_gt3", "d1", "epe_matchable", "epe_unmatchable", "valid_pixels", "matchable_pixels")


@dataclass(frozen=True)
class MetricsReport:
    epe: float
    pct_gt1: float
    pct_gt3: float
    d1: float
    epe_matchable: Optional[float] = None
    epe_unmatchable: Optional[float] = None
    valid_pixels: int = 0
    matchable_pixels: Optional[int] = None

    def as_dict(self):
        return asdict(self)

    def format_text(self):
        rows = [
            ("EPE", f"{self.epe:.4f} px"),
            (">1px", f"{self.pct_gt1:.2f} %"),
            (">3px", f"{self.pct_gt3:.2f} %"),
            ("D1", f"{self.d1:.2f} %"),
            ("EPE matchable", "-" if self.epe_matchable is None else f"{self.epe_matchable:.4f} px"),
            ("EPE unmatchable", "-" if self.epe_unmatchable is None else f"{self.epe_unmatchable:.4f} px"),
            ("valid pixels", str(self.valid_pixels)),
            ("matchable pixels", "-" if self.matchable_pixels is None else str(self.matchable_pixels)),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    def csv_header(self):
        return ",".join(FIELDS)

    def csv_row(self):
        return ",".join("" if getattr(self, f) is None else repr(getattr(self, f)) for f in FIELDS)


def _sequential_sum(values):
    return float(np.cumsum(values)[-1]) if len(values) else 0.0


def _errors(disp, gt, mask):
    check_same_shape(disp, gt, mask)
    sel = np.asarray(mask) > 0
    if not sel.any():
        raise DegenerateInputError("no valid pixels to evaluate")
    disp = np.asarray(disp, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return np.abs(disp[sel] - gt[sel]), gt[sel], sel


def compute_metrics(disp, gt, mask):
    err, g, _ = _errors(disp, gt, mask)
    n = len(err)
    d1_bad = (err > 3.0) & (err > 0.05 * g)
    return MetricsReport(
        epe=_sequential_sum(err) / n,
        pct_gt1=100.0 * int((err > 1.0).sum()) / n,
        pct_gt3=100.0 * int((err > 3.0).sum()) / n,
        d1=100.0 * int(d1_bad.sum()) / n,
        valid_pixels=n,
    )


def split_metrics(disp, gt, logscale, mask):
    """Metrics plus EPE on matchable (``B' < 0``) and unmatchable pixels separately."""
    base = compute_metrics(disp, gt, mask)
    check_same_shape(disp, logscale)
    err, _, sel = _errors(disp, gt, mask)
    matchable = np.asarray(logscale)[sel] < 0
    n_match = int(matchable.sum())
    n_rest = len(err) - n_match
    return MetricsReport(
        base.epe, base.pct_gt1, base.pct_gt3, base.d1,
        epe_matchable=_sequential_sum(err[matchable]) / n_match if n_match else None,
        epe_unmatchable=_sequential_sum(err[~matchable]) / n_rest if n_rest else None,
        valid_pixels=base.valid_pixels,
        matchable_pixels=n_match,
    )


def sample_filter(gt, mask):
    """Accept a sample unless fewer than 10% of its pixels are valid."""
    mask = np.asarray(mask)
    if mask.size == 0:
        return False
    # integer comparison: exactly 10% is accepted
    return int((mask > 0).sum()) * 10 >= mask.size
