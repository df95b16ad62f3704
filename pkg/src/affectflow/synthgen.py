"""Synthetic corpora with a planted valence episode around each anchor.

Every subject posts one affect-labeling message at t0 and other messages
within +-24 hours of it. Posting follows a Poisson process whose rate has a
circadian term over local hour and a burst that decays away from t0. The
expected score of a message at minute offset ``m`` is

* ``b + A * exp(lam_up * m)`` for ``onset <= m < 0``,
* ``decay_b + decay_A * exp(lam_down * m)`` for ``0 <= m <= end``,
* ``outside_baseline`` elsewhere,

plus Gaussian noise. Texts are strings of lexicon words whose ratings sum to
the raw score that normalizes to the target, so the rule scorer recovers the
target up to quantization of the ratings to tenths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .affect import DEFAULT_NEGATIVE, DEFAULT_POSITIVE, NEGATIVE, POSITIVE, PatternConfig
from .ingest import Message, RawTimeline
from .sentiment import NORMALIZATION_ALPHA, Lexicon, load_lexicon, score

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

START_EPOCH = 1356998400  # 2013-01-01T00:00:00Z
SPREAD_DAYS = 365
TZ_CHOICES = (-480, -420, -360, -300, -240, 0, 60, 120, 330, 600)
MAX_SCORE = 0.95
QUANTIZATION_TOLERANCE = 0.02
FILLERS = (
    "the", "today", "just", "with", "at", "on", "and", "then", "was", "we", "this",
    "that", "it", "to", "of", "in", "went", "home", "after", "work", "lunch", "coffee",
    "bus", "morning", "evening", "now",
)  # fmt: skip


@dataclass(frozen=True)
class EpisodeSpec:
    polarity: str = POSITIVE
    baseline: float = 0.14
    amplitude: float = 0.043
    lambda_up: float = 0.183
    decay_amplitude: float = 0.042
    decay_baseline: float = 0.13
    lambda_down: float = -0.057
    onset: int = -38
    end: int = 53
    outside_baseline: float | None = None
    noise: float = 0.15
    base_rate_per_hour: float = 0.9
    burst_multiplier: float = 30.0
    burst_tau_minutes: float = 30.0
    circadian_amplitude: float = 0.3
    circadian_peak_hour: float = 21.0
    pool_hours: int = 24
    female_fraction: float = 0.5
    unknown_fraction: float = 0.0
    gender_shift: float = 0.0

    def __post_init__(self) -> None:
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if not self.onset < 0 < self.end:
            raise ValueError("need onset < 0 < end")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.lambda_up <= 0 or self.lambda_down >= 0:
            raise ValueError("need lambda_up > 0 and lambda_down < 0")
        if not 0 <= self.circadian_amplitude < 1:
            raise ValueError("circadian_amplitude must lie in [0, 1)")
        if not (0 <= self.female_fraction and 0 <= self.unknown_fraction and self.female_fraction + self.unknown_fraction <= 1):
            raise ValueError("gender fractions must be non-negative and sum to at most 1")

    @property
    def outside(self) -> float:
        return self.baseline if self.outside_baseline is None else self.outside_baseline

    def curve(self, minutes) -> np.ndarray:
        """Expected score at whole-minute offsets."""
        m = np.asarray(minutes, dtype=float)
        y = np.full(m.shape, self.outside)
        up = (m >= self.onset) & (m < 0)
        down = (m >= 0) & (m <= self.end)
        y[up] = self.baseline + self.amplitude * np.exp(self.lambda_up * m[up])
        y[down] = self.decay_baseline + self.decay_amplitude * np.exp(self.lambda_down * m[down])
        return y

    def rate_per_minute(self, minutes: np.ndarray, local_hours: np.ndarray) -> np.ndarray:
        circ = 1 + self.circadian_amplitude * np.cos(2 * np.pi * (local_hours - self.circadian_peak_hour) / 24)
        burst = 1 + self.burst_multiplier * np.exp(-np.abs(minutes) / self.burst_tau_minutes)
        return self.base_rate_per_hour / 60 * circ * burst

    def to_dict(self) -> dict:
        return asdict(self)


def load_spec(path: str | Path) -> EpisodeSpec:
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    table = data.get("episode", data)
    known = {f.name for f in fields(EpisodeSpec)}
    unknown = set(table) - known
    if unknown:
        raise ValueError(f"unknown episode keys: {sorted(unknown)}")
    return EpisodeSpec(**table)


def raw_sum_for(value: float, alpha: float = NORMALIZATION_ALPHA) -> float:
    """Inverse of the scorer's normalization."""
    return value * math.sqrt(alpha) / math.sqrt(1 - value * value)


class TextBank:
    """Texts whose lexicon ratings sum to each multiple of 0.1.

    Words are drawn from plain lowercase lexicon entries that are neither
    boosters nor negators, so no rule other than summation applies.
    """

    def __init__(self, lexicon: Lexicon, max_units: int | None = None, seed: int = 0):
        self.lexicon = lexicon
        by_unit: dict[int, list[str]] = {}
        for token, rating in sorted(lexicon.entries.items()):
            if not (token.isalpha() and token.islower()) or token in lexicon.boosters or token in lexicon.negators:
                continue
            unit = round(rating * 10)
            if unit == 0 or abs(unit / 10 - rating) > 1e-9:
                continue
            by_unit.setdefault(unit, []).append(token)
        self.words = by_unit
        for filler in FILLERS:
            if filler in lexicon.entries or filler in lexicon.boosters or filler in lexicon.negators:
                raise ValueError(f"filler word {filler!r} carries valence")
        limit = math.ceil(10 * raw_sum_for(MAX_SCORE))
        self.max_units = max_units if max_units is not None else limit
        rng = np.random.default_rng(seed)
        self._texts = {u: self._compose(u, rng) for u in range(-self.max_units, self.max_units + 1)}

    def _compose(self, units: int, rng: np.random.Generator) -> list[str]:
        picked: list[str] = []
        rem = units
        positive = sorted(u for u in self.words if u > 0)
        negative = sorted((u for u in self.words if u < 0), reverse=True)
        while rem != 0:
            pool = positive if rem > 0 else negative
            fits = [u for u in pool if abs(u) <= abs(rem)]
            unit = fits[-1] if fits else pool[0]
            options = self.words[unit]
            picked.append(options[int(rng.integers(len(options)))])
            rem -= unit
        return picked

    def units_for(self, value: float) -> int:
        return int(round(10 * raw_sum_for(value)))

    def words_for(self, value: float) -> list[str]:
        u = self.units_for(value)
        if abs(u) > self.max_units:
            raise ValueError(f"score {value} is out of reach of the text bank")
        return self._texts[u]

    def realized(self, value: float) -> float:
        return score(" ".join(self.words_for(value)), self.lexicon)


@dataclass
class SynthReport:
    subjects: int
    messages: int
    clipped: int
    max_quantization_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_reachable(spec: EpisodeSpec) -> None:
    grid = np.arange(-spec.pool_hours * 60, spec.pool_hours * 60 + 1)
    values = spec.curve(grid)
    shifted = values + spec.gender_shift
    bad = [float(v) for v in np.concatenate([values, shifted]) if abs(v) > MAX_SCORE]
    if bad:
        raise ValueError(f"spec curve leaves the reachable score range (|score| <= {MAX_SCORE}): {sorted(set(bad))[:5]}")


def generate_cohort(
    spec: EpisodeSpec,
    n_subjects: int,
    seed: int,
    lexicon: Lexicon | None = None,
    pattern: PatternConfig | None = None,
    subject_prefix: str = "s",
) -> tuple[list[RawTimeline], SynthReport]:
    """Subjects ``s000000`` ... each with one anchor and a +-pool_hours message stream.

    ``subject_prefix`` replaces the leading ``s`` so separately generated
    cohorts can be concatenated into one corpus.
    """
    if n_subjects < 0:
        raise ValueError("n_subjects must be non-negative")
    _check_reachable(spec)
    lexicon = lexicon or load_lexicon()
    pattern = pattern or PatternConfig()
    bank = TextBank(lexicon, seed=seed)
    adjectives = DEFAULT_POSITIVE if spec.polarity == POSITIVE else DEFAULT_NEGATIVE
    adjectives = tuple(a for a in adjectives if pattern.polarity_of(a) == spec.polarity) or adjectives
    boosters = pattern.boosters

    # text per quantized unit, with and without a leading filler, shared across subjects
    texts: dict[tuple[int, int], str] = {}

    def text_for(units: int, filler: int) -> str:
        key = (units, filler)
        if key not in texts:
            words = list(bank._texts[units])
            if filler >= 0:
                words.insert(0, FILLERS[filler])
            texts[key] = " ".join(words)
        return texts[key]

    realized = np.array([score(" ".join(bank._texts[u]), lexicon) for u in range(-bank.max_units, bank.max_units + 1)])
    span = spec.pool_hours * 60
    minutes = np.arange(-span, span)
    curve = spec.curve(minutes)
    timelines, total, clipped, max_err = [], 0, 0, 0.0
    width = len(str(max(n_subjects - 1, 0)))
    for i in range(n_subjects):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        sid = f"{subject_prefix}{i:0{max(width, 6)}d}"
        t0 = START_EPOCH + int(rng.integers(SPREAD_DAYS * 86400))
        tz = int(TZ_CHOICES[int(rng.integers(len(TZ_CHOICES)))])
        u = rng.random()
        gender = "female" if u < spec.female_fraction else ("unknown" if u < spec.female_fraction + spec.unknown_fraction else "male")
        local_hours = (((t0 + 60 * tz + 60 * minutes) % 86400) / 3600.0)
        counts = rng.poisson(spec.rate_per_minute(minutes, local_hours))
        msg_minutes = np.repeat(minutes, counts)
        seconds = rng.integers(0, 60, size=len(msg_minutes))
        target = np.repeat(curve, counts) + rng.normal(0.0, spec.noise, size=len(msg_minutes))
        if gender == "male":
            target += spec.gender_shift
        over = np.abs(target) > MAX_SCORE
        clipped += int(over.sum())
        target = np.clip(target, -MAX_SCORE, MAX_SCORE)
        units = np.rint(10 * target * math.sqrt(NORMALIZATION_ALPHA) / np.sqrt(1 - target * target)).astype(int)
        if len(units):
            max_err = max(max_err, float(np.abs(realized[units + bank.max_units] - target).max()))
        fillers = rng.integers(-1, len(FILLERS), size=len(msg_minutes))

        adjective = adjectives[int(rng.integers(len(adjectives)))]
        booster = boosters[int(rng.integers(len(boosters)))] if boosters and rng.random() < 0.3 else None
        anchor_text = "I feel " + (f"{booster} " if booster else "") + adjective + " today"
        messages = [Message(sid, f"{sid}-a", t0, tz, anchor_text, False, gender)]
        times = t0 + 60 * msg_minutes + seconds
        for j in range(len(msg_minutes)):
            messages.append(
                Message(sid, f"{sid}-{j:05d}", int(times[j]), tz, text_for(int(units[j]), int(fillers[j])), False, gender)
            )
        messages.sort(key=lambda msg: msg.utc_time)
        total += len(messages)
        timelines.append(RawTimeline(sid, tuple(messages)))

    if clipped:
        logger.info("clipped %d noisy target(s) to +-%.2f", clipped, MAX_SCORE)
    return timelines, SynthReport(n_subjects, total, clipped, max_err)
