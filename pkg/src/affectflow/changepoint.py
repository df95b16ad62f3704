"""Change-point criteria for valence excursions around t0.

Three criteria are combined: a two-sided CUSUM chart against the null-model
mean, non-overlap of observed and null percentile bands (see
``nullmodel.ci_divergence``), and the run around t0 that stays beyond the
series median. Interval endpoints are window start offsets in minutes and
durations count both endpoints (``end - start + 1``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .stats import nearest_rank, round_half_away

logger = logging.getLogger(__name__)

METHODS = ("cusum", "ci_divergence", "median_excursion")


@dataclass(frozen=True)
class CusumParams:
    T: float
    K: float
    H: float = 0.01
    lambda_min: int = 40

    def __post_init__(self) -> None:
        if not self.H > 0:
            raise ValueError("H must be positive")
        if self.lambda_min < 1:
            raise ValueError("lambda_min must be at least 1")
        if not (math.isfinite(self.T) and math.isfinite(self.K)):
            raise ValueError("T and K must be finite")


def span_minutes(start: int, end: int) -> int:
    return int(end) - int(start) + 1


@dataclass
class ChangeReport:
    method: str
    intervals: list[tuple[int, int]] = field(default_factory=list)
    window_minutes: int = 1
    directions: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        self.intervals = [(int(a), int(b)) for a, b in self.intervals]
        if not self.directions:
            self.directions = [""] * len(self.intervals)
        for (a, b), (c, _) in zip(self.intervals, self.intervals[1:]):
            if c <= b:
                raise ValueError("intervals must be sorted and non-overlapping")

    @property
    def durations(self) -> list[int]:
        return [span_minutes(a, b) for a, b in self.intervals]

    def covering_t0(self, direction: str | None = None) -> tuple[int, int] | None:
        """The interval whose windows include offset 0, if any.

        With ``direction`` only intervals of that direction (or untagged ones) qualify.
        """
        for (start, end), d in zip(self.intervals, self.directions):
            if direction and d and d != direction:
                continue
            if start <= 0 < end + self.window_minutes:
                return start, end
        return None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "window_minutes": self.window_minutes,
            "intervals": [
                {"start": a, "end": b, "duration": span_minutes(a, b), "direction": d}
                for (a, b), d in zip(self.intervals, self.directions)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChangeReport":
        intervals = [(item["start"], item["end"]) for item in data["intervals"]]
        directions = [item.get("direction", "") for item in data["intervals"]]
        return cls(data["method"], intervals, data.get("window_minutes", 1), directions)


def cusum_chart(values: Sequence[float], T: float, K: float) -> tuple[np.ndarray, np.ndarray]:
    """Upper and lower CUSUM statistics, both started at zero.

    Undefined (NaN) inputs leave the statistics unchanged.
    """
    upper_ref = T + K
    lower_ref = T - K
    n = len(values)
    s_hi = np.zeros(n)
    s_lo = np.zeros(n)
    hi = lo = 0.0
    for i, x in enumerate(values):
        x = float(x)
        if x == x:
            hi = max(0.0, hi + x - upper_ref)
            lo = min(0.0, lo + x - lower_ref)
        s_hi[i] = hi
        s_lo[i] = lo
    return s_hi, s_lo


def _monotone_runs(stat: np.ndarray, violating: np.ndarray, increasing: bool) -> list[tuple[int, int]]:
    """Maximal runs of consecutive violations along which ``stat`` keeps its trend (ties allowed)."""
    runs = []
    i, n = 0, len(stat)
    while i < n:
        if not violating[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and violating[j + 1] and (stat[j + 1] >= stat[j] if increasing else stat[j + 1] <= stat[j]):
            j += 1
        runs.append((i, j))
        i = j + 1
    return runs


def cusum(
    values: Sequence[float],
    offsets: Sequence[int],
    params: CusumParams,
    direction: str = "both",
    window_minutes: int = 1,
) -> ChangeReport:
    """Anomalies of a valence series against the null reference ``T`` with allowance ``K``.

    Only runs lasting strictly longer than ``params.lambda_min`` minutes are kept.
    """
    if direction not in ("upper", "lower", "both"):
        raise ValueError("direction must be 'upper', 'lower' or 'both'")
    if len(values) != len(offsets):
        raise ValueError("values and offsets differ in length")
    if len(values) * window_minutes <= params.lambda_min:
        return ChangeReport("cusum", [], window_minutes)
    s_hi, s_lo = cusum_chart(values, params.T, params.K)
    found = []
    if direction in ("upper", "both"):
        found += [(i, j, "upper") for i, j in _monotone_runs(s_hi, s_hi > params.H, increasing=True)]
    if direction in ("lower", "both"):
        found += [(i, j, "lower") for i, j in _monotone_runs(s_lo, s_lo < -params.H, increasing=False)]
    found = [(i, j, d) for i, j, d in found if (j - i + 1) * window_minutes > params.lambda_min]
    found.sort()
    kept = []
    for i, j, d in found:
        if kept and i <= kept[-1][1]:
            # an upper and a lower run overlapping; keep the longer
            if j - i > kept[-1][1] - kept[-1][0]:
                kept[-1] = (i, j, d)
            continue
        kept.append((i, j, d))
    return ChangeReport(
        "cusum",
        [(int(offsets[i]), int(offsets[j])) for i, j, _ in kept],
        window_minutes,
        [d for _, _, d in kept],
    )


def baseline_ci(
    values: Sequence[float], offsets: Sequence[int], baseline_hours: float = 3.0, start: int = -360
) -> tuple[float, float]:
    """Nearest-rank 2.5th and 97.5th percentiles of the series over the first hours."""
    values = np.asarray(values, dtype=float)
    offsets = np.asarray(offsets)
    mask = (offsets >= start) & (offsets < start + baseline_hours * 60) & ~np.isnan(values)
    if mask.sum() < 2:
        raise ValueError("not enough defined windows in the baseline period")
    base = values[mask]
    return nearest_rank(base, 2.5), nearest_rank(base, 97.5)


def median_excursion(
    values: Sequence[float], offsets: Sequence[int], polarity: str, window_minutes: int = 1
) -> ChangeReport:
    """Longest run around t0 staying strictly above (positive) or below (negative) the median."""
    values = np.asarray(values, dtype=float)
    offsets = np.asarray(offsets)
    defined = ~np.isnan(values)
    if not defined.any():
        return ChangeReport("median_excursion", [], window_minutes)
    q2 = float(np.median(values[defined]))
    beyond = (values > q2) if polarity == "positive" else (values < q2)
    beyond &= defined
    zero = np.flatnonzero((offsets <= 0) & (offsets + window_minutes > 0))
    if len(zero) == 0 or not beyond[zero[0]]:
        logger.warning("value at t0 does not lie beyond the median; no excursion")
        return ChangeReport("median_excursion", [], window_minutes)
    lo = hi = int(zero[0])
    while lo - 1 >= 0 and beyond[lo - 1]:
        lo -= 1
    while hi + 1 < len(values) and beyond[hi + 1]:
        hi += 1
    direction = "upper" if polarity == "positive" else "lower"
    return ChangeReport("median_excursion", [(int(offsets[lo]), int(offsets[hi]))], window_minutes, [direction])


@dataclass
class DurationEstimate:
    spans: dict[str, tuple[int, int] | None]
    average_span: tuple[int, int] | None
    excluded: list[str]

    @property
    def average_duration(self) -> int | None:
        if self.average_span is None:
            return None
        return span_minutes(*self.average_span)

    def to_dict(self) -> dict:
        rows = []
        for method, span in self.spans.items():
            rows.append(
                {
                    "method": method,
                    "span": None if span is None else list(span),
                    "duration": None if span is None else span_minutes(*span),
                }
            )
        return {
            "methods": rows,
            "average": {
                "span": None if self.average_span is None else list(self.average_span),
                "duration": self.average_duration,
            },
            "excluded": list(self.excluded),
        }


def estimate_duration(reports: Sequence[ChangeReport], direction: str | None = None) -> DurationEstimate:
    """Average the t0-covering spans of each criterion, rounding half away from zero.

    ``direction`` ("upper" or "lower") restricts each criterion to excursions
    on the cohort's side.
    """
    spans: dict[str, tuple[int, int] | None] = {}
    excluded = []
    for report in reports:
        span = report.covering_t0(direction)
        spans[report.method] = span
        if span is None:
            excluded.append(report.method)
            logger.warning("%s found no interval covering t0; left out of the average", report.method)
    used = [s for s in spans.values() if s is not None]
    if not used:
        return DurationEstimate(spans, None, excluded)
    start = round_half_away(sum(s[0] for s in used) / len(used))
    end = round_half_away(sum(s[1] for s in used) / len(used))
    return DurationEstimate(spans, (start, end), excluded)
