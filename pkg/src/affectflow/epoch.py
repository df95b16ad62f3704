"""Event-aligned windowing of scored messages around each anchor t0.

A message posted ``m`` whole minutes after its anchor (``m`` floored, so a
message 30 s before t0 has ``m = -1``) falls in window ``floor(m / w)``,
whose start offset is ``w * floor(m / w)``. Windows are half-open
``[k, k + w)``. Offsets run from -360 to +360 inclusive, so the last window
at ``w > 1`` holds only minute +360.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .affect import NEGATIVE, POSITIVE, AnchoredTimeline, Cohort

logger = logging.getLogger(__name__)

HORIZON_MINUTES = 360
ALLOWED_WINDOWS = (1, 5, 10, 15)


def minute_offsets(times: np.ndarray, t0: int) -> np.ndarray:
    return np.floor_divide(np.asarray(times, dtype=np.int64) - t0, 60)


def stratum_keys(utc_times: np.ndarray, tz_offset_minutes: int) -> np.ndarray:
    """weekday * 24 + local hour, Monday = 0."""
    local = np.asarray(utc_times, dtype=np.int64) + 60 * int(tz_offset_minutes)
    days = np.floor_divide(local, 86400)
    hour = np.floor_divide(local - days * 86400, 3600)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday
    return (weekday * 24 + hour).astype(np.int64)


@dataclass
class WindowSeries:
    """Per-window aggregates for one cohort, plus the message-level arrays behind them.

    ``means`` is NaN where a window has no messages.
    """

    polarity: str
    window_minutes: int
    offsets: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    message_window: np.ndarray = field(repr=False)
    message_score: np.ndarray = field(repr=False)
    message_stratum: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not (len(self.offsets) == len(self.counts) == len(self.means)):
            raise ValueError("offsets, counts and means differ in length")
        if not (len(self.message_window) == len(self.message_score) == len(self.message_stratum)):
            raise ValueError("message-level arrays differ in length")

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def values(self) -> list[np.ndarray]:
        order = np.argsort(self.message_window, kind="stable")
        bounds = np.searchsorted(self.message_window[order], np.arange(len(self.offsets) + 1))
        scores = self.message_score[order]
        return [scores[bounds[i] : bounds[i + 1]] for i in range(len(self.offsets))]

    def index_of(self, offset: int) -> int:
        return int(math.floor((offset + HORIZON_MINUTES) / self.window_minutes))

    def to_dict(self, keep_values: bool = False) -> dict:
        out = {
            "polarity": self.polarity,
            "window_minutes": self.window_minutes,
            "offsets": [int(k) for k in self.offsets],
            "counts": [int(c) for c in self.counts],
            "means": [None if np.isnan(m) else float(m) for m in self.means],
        }
        if keep_values:
            out["values"] = [[float(v) for v in vals] for vals in self.values]
        return out


def empty_grid(window_minutes: int) -> np.ndarray:
    if window_minutes < 1 or HORIZON_MINUTES % window_minutes:
        raise ValueError(f"window_minutes must divide {HORIZON_MINUTES}; got {window_minutes}")
    return np.arange(-HORIZON_MINUTES, HORIZON_MINUTES + 1, window_minutes, dtype=np.int64)


def cohort_messages(cohort: Cohort) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minute offsets, scores and strata of every message within +-360 minutes."""
    if not cohort.is_scored:
        raise ValueError("cohort has not been scored")
    offsets, scores, strata = [], [], []
    for timeline in cohort.timelines:
        if not timeline.messages:
            continue
        times = np.fromiter((m.utc_time for m in timeline.messages), dtype=np.int64, count=len(timeline.messages))
        m = minute_offsets(times, timeline.anchor.t0)
        keep = (m >= -HORIZON_MINUTES) & (m <= HORIZON_MINUTES)
        offsets.append(m[keep])
        scores.append(np.asarray(timeline.scores, dtype=float)[keep])
        strata.append(stratum_keys(times[keep], timeline.tz_offset_minutes))
    if not offsets:
        return np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64)
    return np.concatenate(offsets), np.concatenate(scores), np.concatenate(strata)


def window_series(cohort: Cohort, window_minutes: int = 1) -> WindowSeries:
    grid = empty_grid(window_minutes)
    offsets, scores, strata = cohort_messages(cohort)
    index = np.floor_divide(offsets, window_minutes) + HORIZON_MINUTES // window_minutes
    counts = np.bincount(index, minlength=len(grid)).astype(np.int64)
    sums = np.bincount(index, weights=scores, minlength=len(grid))
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return WindowSeries(cohort.polarity, window_minutes, grid, counts, means, index.astype(np.int64), scores, strata)


def rolling_mean(values: np.ndarray, span: int = 10) -> np.ndarray:
    """Centered moving average over window ``[i - span//2, i + span - span//2 - 1]``.

    Missing (NaN) entries are skipped; near the ends the average runs over
    the windows that exist. An output is NaN only when its whole window is.
    """
    if span < 1:
        raise ValueError("span must be at least 1")
    x = np.asarray(values, dtype=float)
    defined = ~np.isnan(x)
    csum = np.concatenate([[0.0], np.cumsum(np.where(defined, x, 0.0))])
    ccount = np.concatenate([[0], np.cumsum(defined)])
    idx = np.arange(len(x))
    lo = np.clip(idx - span // 2, 0, len(x))
    hi = np.clip(idx + span - span // 2, 0, len(x))
    n = ccount[hi] - ccount[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, (csum[hi] - csum[lo]) / np.maximum(n, 1), np.nan)


@dataclass(frozen=True)
class SubjectZSeries:
    subject_id: str
    offsets: np.ndarray
    z: np.ndarray
    degenerate: bool = False


def subject_z(timeline: AnchoredTimeline) -> SubjectZSeries:
    """Standardize one subject's scores against their own mean and sample deviation."""
    if timeline.scores is None:
        raise ValueError("timeline has not been scored")
    times = np.array([m.utc_time for m in timeline.messages], dtype=np.int64)
    offsets = minute_offsets(times, timeline.anchor.t0)
    scores = np.asarray(timeline.scores, dtype=float)
    if len(scores) < 2 or np.ptp(scores) == 0.0:
        return SubjectZSeries(timeline.subject_id, offsets, np.zeros(len(scores)), degenerate=True)
    z = (scores - scores.mean()) / scores.std(ddof=1)
    return SubjectZSeries(timeline.subject_id, offsets, z)


@dataclass(frozen=True)
class PeakValue:
    subject_id: str
    peak_z: float


def peak_values(cohort: Cohort, span: tuple[int, int]) -> tuple[list[PeakValue], int]:
    """Per-subject extreme z inside ``span`` (inclusive minute offsets).

    Positive cohorts take the maximum, negative the minimum. Returns the peaks
    and the number of timelines omitted (degenerate or nothing in span).
    """
    if cohort.polarity not in (POSITIVE, NEGATIVE):
        raise ValueError(f"unknown polarity {cohort.polarity!r}")
    lo, hi = span
    peaks, omitted = [], 0
    for timeline in cohort.timelines:
        series = subject_z(timeline)
        inside = (series.offsets >= lo) & (series.offsets <= hi)
        if series.degenerate or not inside.any():
            omitted += 1
            continue
        z = series.z[inside]
        peak = z.max() if cohort.polarity == POSITIVE else z.min()
        peaks.append(PeakValue(timeline.subject_id, float(peak)))
    if omitted:
        logger.info("%d timeline(s) without a usable peak", omitted)
    return peaks, omitted
