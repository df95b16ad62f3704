from __future__ import annotations

import numpy as np
import pytest

from affectflow.changepoint import ChangeReport
from affectflow.rdd import DiffSeries, difference_series, gender_change_spans, ols_line, rdd_fit


class S:
    def __init__(self, offsets, means):
        self.offsets, self.means = np.asarray(offsets), np.asarray(means, float)


K = np.arange(-360, 361, 10)


def test_difference_series():
    f = S(K, np.linspace(0, 1, len(K)))
    assert np.allclose(difference_series(f, f).values, 0)
    m = S(K, f.means + 0.05)
    assert np.allclose(difference_series(m, f).values, 0.05)
    assert np.allclose(difference_series(m, f).values, -difference_series(f, m).values)
    gap = S(K, np.where(K == 0, np.nan, f.means))
    assert np.isnan(difference_series(gap, f).values[K == 0]).all()
    with pytest.raises(ValueError):
        difference_series(S(K[:-1], f.means[:-1]), f)


def test_single_line_has_no_gap():
    d = DiffSeries(K, -0.05 + 1e-4 * K)
    r = rdd_fit(d)
    assert r.gap == pytest.approx(0, abs=1e-12)
    assert r.pre.slope == pytest.approx(r.post.slope, abs=1e-12)


def test_noiseless_two_lines():
    v = np.where(K < 0, -0.06 - 2e-4 * K, -0.02 + 3e-4 * K)
    r = rdd_fit(DiffSeries(K, v))
    assert r.pre.slope == pytest.approx(-2e-4, abs=1e-9)
    assert r.pre.intercept == pytest.approx(-0.06, abs=1e-9)
    assert r.post.slope == pytest.approx(3e-4, abs=1e-9)
    assert r.post.intercept == pytest.approx(-0.02, abs=1e-9)
    assert r.gap == pytest.approx(0.04, abs=1e-9)


def test_ols_matches_normal_equations_and_ci_symmetry():
    rng = np.random.default_rng(0)
    x = np.arange(-36.0, 0.0)
    y = 0.1 - 0.002 * x + rng.normal(0, 0.01, len(x))
    fit = ols_line(x, y)
    X = np.column_stack([np.ones_like(x), x])
    b0, b1 = np.linalg.solve(X.T @ X, X.T @ y)
    assert (fit.intercept, fit.slope) == pytest.approx((b0, b1), abs=1e-12)
    assert fit.slope_ci[1] - fit.slope == pytest.approx(fit.slope - fit.slope_ci[0])
    with pytest.raises(ValueError):
        ols_line(np.ones(5), y[:5])


def test_planted_gap_recovered_mostly():
    rng = np.random.default_rng(1)
    k = np.arange(-36, 36)
    hits = 0
    for _ in range(200):
        v = 0.001 * k + np.where(k >= 0, 0.04, 0.0) + rng.normal(0, 0.005, len(k))
        hits += 0.03 <= rdd_fit(DiffSeries(k, v)).gap <= 0.05
    assert hits >= 190


def test_missing_windows_dropped():
    v = np.where(K < 0, 0.0, 1.0).astype(float)
    v[::3] = np.nan
    r = rdd_fit(DiffSeries(K, v))
    assert r.gap == pytest.approx(1.0) and not r.overlap


def test_gender_rows():
    report = {"cusum": ChangeReport("cusum", [(-41, 7)], 1, ["lower"]), "ci_divergence": ChangeReport("ci_divergence", [], 10)}
    rows = gender_change_spans({("female", "negative"): report, ("male", "negative"): report})
    assert [r["group"] for r in rows] == ["Female-", "Male-"]
    # durations count both endpoints, as in the pooled duration table
    assert rows[0]["cusum"] == {"span": [-41, 7], "duration": 49}
    assert rows[0]["ci_divergence"] is None
    assert rows[0] == {**rows[1], "group": "Female-"}
