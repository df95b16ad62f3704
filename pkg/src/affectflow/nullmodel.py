"""Stratified null model and percentile bootstrap bands.

The null pool holds every non-anchor message posted within +-24 hours of an
anchor in the cohort. A null draw for a window replaces each observed message
with a random pool message from the same local (weekday, hour) stratum, so the
null matches the observed window in size and time-of-week composition. When a
stratum is empty the draw falls back to the same weekday, then to the whole
pool.

Randomness comes from ``numpy.random.SeedSequence(seed, spawn_key=(stream, window, block))``
substreams, one per purpose, window and block of replicates, so results
depend only on the seed and never on evaluation order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .affect import Cohort
from .changepoint import ChangeReport
from .epoch import HORIZON_MINUTES, WindowSeries, rolling_mean, stratum_keys
from .stats import nearest_rank_sorted

logger = logging.getLogger(__name__)

N_STRATA = 7 * 24
BLOCK_ELEMENTS = 1 << 21
DEFAULT_REPLICATES = 10_000
# substream families, so observed and null draws never share random numbers
STREAM_PLAIN, STREAM_OBSERVED, STREAM_NULL_BANDS, STREAM_NULL_SAMPLE = 0, 1, 2, 3


@dataclass(frozen=True)
class StratumKey:
    weekday: int
    local_hour: int

    def __post_init__(self) -> None:
        if not (0 <= self.weekday <= 6 and 0 <= self.local_hour <= 23):
            raise ValueError("weekday must be 0-6 and local_hour 0-23")

    @property
    def code(self) -> int:
        return self.weekday * 24 + self.local_hour

    @classmethod
    def from_code(cls, code: int) -> "StratumKey":
        return cls(int(code) // 24, int(code) % 24)

    @classmethod
    def from_time(cls, utc_time: int, tz_offset_minutes: int) -> "StratumKey":
        return cls.from_code(int(stratum_keys(np.array([utc_time]), tz_offset_minutes)[0]))


@dataclass
class NullPool:
    """Pool scores sorted by stratum code, with the start of each stratum's block."""

    scores: np.ndarray
    strata: np.ndarray
    bounds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        order = np.argsort(self.strata, kind="stable")
        self.scores = np.asarray(self.scores, dtype=float)[order]
        self.strata = np.asarray(self.strata, dtype=np.int64)[order]
        self.bounds = np.searchsorted(self.strata, np.arange(N_STRATA + 1))

    def __len__(self) -> int:
        return len(self.scores)

    def ranges(self, strata: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
        """Candidate block ``[lo, lo + length)`` for each requested stratum, and the fallback count."""
        if len(self.scores) == 0:
            raise ValueError("null pool is empty")
        strata = np.asarray(strata, dtype=np.int64)
        lo = self.bounds[strata]
        length = self.bounds[strata + 1] - lo
        empty = length == 0
        fallbacks = int(empty.sum())
        if fallbacks:
            day_start = (strata // 24) * 24
            day_lo = self.bounds[day_start]
            day_len = self.bounds[day_start + 24] - day_lo
            lo = np.where(empty, day_lo, lo)
            length = np.where(empty, day_len, length)
            still = length == 0
            lo = np.where(still, 0, lo)
            length = np.where(still, len(self.scores), length)
        return lo, length, fallbacks


def build_pool(cohort: Cohort, exclude_window: bool = False) -> NullPool:
    """Collect the cohort's +-24h pool messages, each counted once per subject.

    With ``exclude_window`` the +-6h analysis window of each anchor is left
    out (sensitivity analysis).
    """
    if len(cohort) == 0:
        raise ValueError("cohort is empty")
    if not cohort.is_scored:
        raise ValueError("cohort has not been scored")
    seen: set[tuple[str, str]] = set()
    scores, strata = [], []
    for timeline in cohort.timelines:
        keep_scores, keep_times = [], []
        for message, value in zip(timeline.pool, timeline.pool_scores):
            key = (timeline.subject_id, message.message_id)
            if key in seen:
                continue
            if exclude_window:
                m = (message.utc_time - timeline.anchor.t0) // 60
                if -HORIZON_MINUTES <= m <= HORIZON_MINUTES:
                    continue
            seen.add(key)
            keep_scores.append(value)
            keep_times.append(message.utc_time)
        if keep_times:
            scores.append(np.asarray(keep_scores, dtype=float))
            strata.append(stratum_keys(np.asarray(keep_times, dtype=np.int64), timeline.tz_offset_minutes))
    if not scores:
        raise ValueError("cohort has no pool messages")
    return NullPool(np.concatenate(scores), np.concatenate(strata))


def _generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def _block_size(n: int, replicates: int) -> int:
    return max(1, min(replicates, BLOCK_ELEMENTS // max(n, 1)))


def replicate_means(
    source: np.ndarray,
    lo: np.ndarray,
    length: np.ndarray,
    replicates: int,
    seed: int,
    window: int,
    stream: int = STREAM_PLAIN,
) -> np.ndarray:
    """Means of ``replicates`` resamples; element ``j`` of each resample is drawn from
    ``source[lo[j] : lo[j] + length[j]]`` uniformly with replacement."""
    n = len(lo)
    block = _block_size(n, replicates)
    out = np.empty(replicates)
    for b, start in enumerate(range(0, replicates, block)):
        size = min(block, replicates - start)
        u = _generator(seed, stream, window, b).random((size, n))
        idx = lo + np.minimum((u * length).astype(np.int64), length - 1)
        out[start : start + size] = source[idx].mean(axis=1)
    return out


@dataclass(frozen=True)
class BootstrapResult:
    p5: float
    p50: float
    p95: float
    replicate_count: int
    seed: int


def _percentiles(means: np.ndarray) -> tuple[float, float, float]:
    ordered = np.sort(means)
    return tuple(float(nearest_rank_sorted(ordered, p)) for p in (5, 50, 95))


def bootstrap_ci(values, replicates: int = DEFAULT_REPLICATES, seed: int = 0, window: int = 0) -> BootstrapResult:
    """Nearest-rank 5/50/95 percentiles of the resampled mean of ``values``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot bootstrap an empty sample")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    n = values.size
    means = replicate_means(values, np.zeros(n, np.int64), np.full(n, n, np.int64), replicates, seed, window)
    return BootstrapResult(*_percentiles(means), replicate_count=replicates, seed=seed)


@dataclass
class SeriesBands:
    """Per-window 5/50/95 percentile band; NaN where the window is empty."""

    kind: str
    window_minutes: int
    offsets: np.ndarray
    p5: np.ndarray
    p50: np.ndarray
    p95: np.ndarray
    replicates: int
    seed: int
    fallbacks: int = 0

    def to_dict(self) -> dict:
        def clean(arr):
            return [None if np.isnan(v) else float(v) for v in arr]

        return {
            "kind": self.kind,
            "window_minutes": self.window_minutes,
            "offsets": [int(k) for k in self.offsets],
            "p5": clean(self.p5),
            "p50": clean(self.p50),
            "p95": clean(self.p95),
            "replicates": self.replicates,
            "seed": self.seed,
            "fallbacks": self.fallbacks,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SeriesBands":
        def arr(key):
            return np.array([np.nan if v is None else v for v in data[key]], dtype=float)

        return cls(
            data["kind"],
            data["window_minutes"],
            np.asarray(data["offsets"], dtype=np.int64),
            arr("p5"),
            arr("p50"),
            arr("p95"),
            data["replicates"],
            data["seed"],
            data.get("fallbacks", 0),
        )


def _by_window(series: WindowSeries) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(series.message_window, kind="stable")
    bounds = np.searchsorted(series.message_window[order], np.arange(len(series.offsets) + 1))
    return order, bounds


def _bands(series, kind, replicates, seed, stream, draw) -> SeriesBands:
    if replicates < 1:
        raise ValueError("replicates must be positive")
    order, bounds = _by_window(series)
    nw = len(series.offsets)
    p5, p50, p95 = np.full(nw, np.nan), np.full(nw, np.nan), np.full(nw, np.nan)
    fallbacks = 0
    for w in range(nw):
        members = order[bounds[w] : bounds[w + 1]]
        if len(members) == 0:
            continue
        source, lo, length, fb = draw(members)
        fallbacks += fb
        p5[w], p50[w], p95[w] = _percentiles(replicate_means(source, lo, length, replicates, seed, w, stream))
    return SeriesBands(kind, series.window_minutes, series.offsets.copy(), p5, p50, p95, replicates, seed, fallbacks)


def observed_bands(series: WindowSeries, replicates: int = DEFAULT_REPLICATES, seed: int = 0) -> SeriesBands:
    """Bootstrap band of each window's observed mean."""

    def draw(members):
        n = len(members)
        return series.message_score[members], np.zeros(n, np.int64), np.full(n, n, np.int64), 0

    return _bands(series, "observed", replicates, seed, STREAM_OBSERVED, draw)


def null_bands(
    series: WindowSeries, pool: NullPool, replicates: int = DEFAULT_REPLICATES, seed: int = 0
) -> SeriesBands:
    """Band of the window mean under repeated stratified draws from the null pool."""

    def draw(members):
        lo, length, fb = pool.ranges(series.message_stratum[members])
        return pool.scores, lo, length, fb

    bands = _bands(series, "null", replicates, seed, STREAM_NULL_BANDS, draw)
    if bands.fallbacks:
        logger.info("%d null draw(s) used a stratum fallback", bands.fallbacks)
    return bands


@dataclass
class NullSample:
    """One stratified draw per window, matching the observed counts."""

    window_minutes: int
    offsets: np.ndarray
    values: list[np.ndarray]
    fallbacks: int
    seed: int

    @property
    def means(self) -> np.ndarray:
        return np.array([v.mean() if len(v) else np.nan for v in self.values])


def build_null(cohort: Cohort, series: WindowSeries, seed: int, pool: NullPool | None = None) -> NullSample:
    if len(cohort) == 0:
        raise ValueError("cohort is empty")
    pool = pool if pool is not None else build_pool(cohort)
    order, bounds = _by_window(series)
    values, fallbacks = [], 0
    for w in range(len(series.offsets)):
        members = order[bounds[w] : bounds[w + 1]]
        if len(members) == 0:
            values.append(np.zeros(0))
            continue
        lo, length, fb = pool.ranges(series.message_stratum[members])
        fallbacks += fb
        u = _generator(seed, STREAM_NULL_SAMPLE, w, 0).random(len(members))
        values.append(pool.scores[lo + np.minimum((u * length).astype(np.int64), length - 1)])
    if fallbacks:
        logger.info("%d null draw(s) used a stratum fallback", fallbacks)
    return NullSample(series.window_minutes, series.offsets.copy(), values, fallbacks, seed)


def null_reference(null: NullSample, smooth_span: int | None = 10) -> tuple[float, float]:
    """CUSUM reference ``(T, K)``: mean and sample deviation of the (smoothed) null series."""
    means = null.means
    if smooth_span:
        means = rolling_mean(means, smooth_span)
    defined = means[~np.isnan(means)]
    if defined.size < 2:
        raise ValueError("null series has fewer than two defined windows")
    return float(defined.mean()), float(defined.std(ddof=1))


def ci_divergence(observed: SeriesBands, null: SeriesBands) -> ChangeReport:
    """Runs of consecutive windows whose observed and null bands do not intersect.

    A run ends where the observed band crosses from one side of the null band
    to the other.
    """
    if observed.window_minutes != null.window_minutes or not np.array_equal(observed.offsets, null.offsets):
        raise ValueError("observed and null bands are on different grids")
    above = observed.p5 > null.p95
    below = observed.p95 < null.p5
    disjoint = above | below
    intervals, directions = [], []
    i, n = 0, len(disjoint)
    while i < n:
        if not disjoint[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and disjoint[j + 1] and above[j + 1] == above[i]:
            j += 1
        intervals.append((int(observed.offsets[i]), int(observed.offsets[j])))
        directions.append("upper" if above[i] else "lower")
        i = j + 1
    return ChangeReport("ci_divergence", intervals, observed.window_minutes, directions)


def stratum_histogram(strata: np.ndarray) -> np.ndarray:
    return np.bincount(np.asarray(strata, dtype=np.int64), minlength=N_STRATA)

