import numpy as np
import pytest

from dsmstereo.errors import DegenerateInputError
from dsmstereo.metrics import compute_metrics, sample_filter, split_metrics


def row(*values):
    return np.array([values], dtype=float)


def test_perfect_prediction():
    gt = np.random.default_rng(0).uniform(0, 50, (4, 4))
    r = compute_metrics(gt, gt, np.ones_like(gt))
    assert (r.epe, r.pct_gt1, r.pct_gt3, r.d1) == (0, 0, 0, 0)


def test_error_arithmetic():
    gt = row(10, 10, 10, 10)
    r = compute_metrics(gt + row(0, 1, 2, 5), gt, np.ones_like(gt))
    assert r.epe == 2.0 and r.pct_gt1 == 50.0 and r.pct_gt3 == 25.0


@pytest.mark.parametrize("err, gt, bad", [(3.5, 100, False), (6, 100, True), (4, 200, False), (4, 20, True),
                                          (3.0, 10, False)])
def test_d1_conjunction(err, gt, bad):
    r = compute_metrics(row(gt + err), row(gt), row(1))
    assert r.d1 == (100.0 if bad else 0.0)


def test_zero_valid_pixels():
    with pytest.raises(DegenerateInputError):
        compute_metrics(row(1), row(1), row(0))


def test_split_all_matchable():
    rng = np.random.default_rng(2)
    gt = rng.uniform(0, 40, (5, 5))
    pred = gt + rng.normal(size=gt.shape)
    r = split_metrics(pred, gt, np.full_like(gt, -1.0), np.ones_like(gt))
    assert r.epe_matchable == r.epe and r.epe_unmatchable is None and r.matchable_pixels == 25
    r = split_metrics(pred, gt, np.full_like(gt, 1.0), np.ones_like(gt))
    assert r.epe_unmatchable == r.epe and r.epe_matchable is None and r.matchable_pixels == 0


def test_split_recombines():
    rng = np.random.default_rng(3)
    gt = rng.uniform(0, 40, (16, 16))
    pred = gt + rng.normal(size=gt.shape) * 3
    mask = (rng.uniform(size=gt.shape) > 0.2).astype(float)
    r = split_metrics(pred, gt, rng.normal(size=gt.shape), mask)
    n_m = r.matchable_pixels
    combined = (r.epe_matchable * n_m + r.epe_unmatchable * (r.valid_pixels - n_m)) / r.valid_pixels
    assert abs(combined - r.epe) < 1e-9
    assert 0 <= n_m <= r.valid_pixels


def test_sample_filter():
    mask = np.zeros(100)
    mask[:9] = 1
    assert not sample_filter(None, mask)
    mask[:10] = 1
    assert sample_filter(None, mask)
    assert sample_filter(None, np.ones(100))


def test_report_formats():
    r = split_metrics(row(1, 2), row(1, 5), row(-1, 1), row(1, 1))
    text = r.format_text()
    assert "EPE matchable" in text and "D1" in text
    header, values = r.csv_header().split(","), r.csv_row().split(",")
    assert len(header) == len(values) and float(values[0]) == r.epe
