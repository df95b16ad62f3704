"""Male-minus-female difference series and a linear regression discontinuity at t0."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from .changepoint import ChangeReport, span_minutes

GENDER_ROWS = (("female", "positive"), ("male", "positive"), ("female", "negative"), ("male", "negative"))


@dataclass
class DiffSeries:
    offsets: np.ndarray
    values: np.ndarray

    def to_dict(self) -> dict:
        return {
            "offsets": [int(k) for k in self.offsets],
            "values": [None if np.isnan(v) else float(v) for v in self.values],
        }


def difference_series(male, female) -> DiffSeries:
    """Pointwise ``male - female`` on a shared grid; missing on either side stays missing.

    Accepts anything with ``offsets`` and ``means`` arrays (e.g. ``WindowSeries``).
    """
    if not np.array_equal(np.asarray(male.offsets), np.asarray(female.offsets)):
        raise ValueError("series are on different grids")
    return DiffSeries(np.asarray(male.offsets).copy(), np.asarray(male.means, float) - np.asarray(female.means, float))


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_ci: tuple[float, float]
    intercept_ci: tuple[float, float]
    intercept_se: float
    n: int

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_ci": list(self.slope_ci),
            "intercept_ci": list(self.intercept_ci),
            "n": self.n,
        }


def ols_line(x: np.ndarray, y: np.ndarray, level: float = 0.95) -> LineFit:
    """Least-squares line with t-based confidence intervals (homoscedastic normal errors)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 points per side")
    if np.ptp(x) == 0:
        raise ValueError("offsets are constant; slope is not identifiable")
    X = np.column_stack([np.ones(n), x])
    xtx = X.T @ X
    intercept, slope = np.linalg.solve(xtx, X.T @ y)
    resid = y - (intercept + slope * x)
    s2 = float(resid @ resid) / (n - 2)
    cov = s2 * np.linalg.inv(xtx)
    q = stats.t.ppf(0.5 + level / 2, n - 2)
    se_i, se_s = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    return LineFit(
        float(slope),
        float(intercept),
        (float(slope - q * se_s), float(slope + q * se_s)),
        (float(intercept - q * se_i), float(intercept + q * se_i)),
        se_i,
        n,
    )


@dataclass(frozen=True)
class RddResult:
    pre: LineFit
    post: LineFit
    gap: float
    gap_ci: tuple[float, float]
    overlap: bool

    def to_dict(self) -> dict:
        return {
            "pre": self.pre.to_dict(),
            "post": self.post.to_dict(),
            "gap": self.gap,
            "gap_ci": list(self.gap_ci),
            "overlap": self.overlap,
        }


def rdd_fit(diff: DiffSeries, t0: int = 0, level: float = 0.95) -> RddResult:
    """Separate lines before (k < t0) and from t0 on; the gap is their difference at t0.

    ``overlap`` tells whether the two lines' confidence intervals at t0 intersect.
    """
    k = np.asarray(diff.offsets, dtype=float) - t0
    v = np.asarray(diff.values, dtype=float)
    defined = ~np.isnan(v)
    pre_mask, post_mask = defined & (k < 0), defined & (k >= 0)
    pre = ols_line(k[pre_mask], v[pre_mask], level)
    post = ols_line(k[post_mask], v[post_mask], level)
    gap = post.intercept - pre.intercept
    se = math.hypot(pre.intercept_se, post.intercept_se)
    q = stats.t.ppf(0.5 + level / 2, pre.n + post.n - 4)
    overlap = not (post.intercept_ci[0] > pre.intercept_ci[1] or post.intercept_ci[1] < pre.intercept_ci[0])
    return RddResult(pre, post, float(gap), (float(gap - q * se), float(gap + q * se)), overlap)


def _row_label(gender: str, polarity: str) -> str:
    return f"{gender.capitalize()}{'+' if polarity == 'positive' else '-'}"


def gender_change_spans(cells: Mapping[tuple[str, str], Mapping[str, ChangeReport]]) -> list[dict]:
    """One row per gender and polarity with the t0-covering CUSUM and band-divergence spans.

    ``cells[(gender, polarity)]`` maps a method name to its report; absent
    cells are skipped.
    """
    rows = []
    for gender, polarity in GENDER_ROWS:
        reports = cells.get((gender, polarity))
        if reports is None:
            continue
        row = {"group": _row_label(gender, polarity)}
        for method in ("ci_divergence", "cusum"):
            report = reports.get(method)
            direction = "upper" if polarity == "positive" else "lower"
            span = report.covering_t0(direction) if report is not None else None
            row[method] = None if span is None else {"span": list(span), "duration": span_minutes(*span)}
        rows.append(row)
    return rows
