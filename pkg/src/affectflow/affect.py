"""Detection of explicit affect-labeling statements and cohort construction.

A statement is one of the configured prefixes ("i feel", "i'm feeling",
"i am feeling"), at most one booster, then one of the configured valence
adjectives as the very next token. Matching is on lowercased whitespace
tokens with leading/trailing punctuation stripped.
"""

from __future__ import annotations

import logging
from bisect import bisect_left, bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .ingest import Message, RawTimeline
from .stats import nearest_rank

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"

DEFAULT_PREFIXES = ("i feel", "i'm feeling", "i am feeling")
DEFAULT_POSITIVE = ("good", "happy", "great", "awesome")
DEFAULT_NEGATIVE = ("bad", "unhappy", "sad", "terrible", "horrible", "awful")

_PUNCT = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~"
_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})


def _default_boosters() -> tuple[str, ...]:
    from importlib import resources

    text = (resources.files("affectflow") / "data" / "pattern_boosters.txt").read_text(encoding="utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class PatternConfig:
    prefixes: tuple[str, ...] = DEFAULT_PREFIXES
    boosters: tuple[str, ...] = field(default_factory=_default_boosters)
    positive_adjectives: tuple[str, ...] = DEFAULT_POSITIVE
    negative_adjectives: tuple[str, ...] = DEFAULT_NEGATIVE

    def __post_init__(self) -> None:
        for name in ("prefixes", "boosters", "positive_adjectives", "negative_adjectives"):
            values = tuple(getattr(self, name))
            if any(v != v.lower() for v in values):
                raise ValueError(f"{name} entries must be lowercase")
            object.__setattr__(self, name, values)
        overlap = set(self.positive_adjectives) & set(self.negative_adjectives)
        if overlap:
            raise ValueError(f"adjectives listed with both polarities: {sorted(overlap)}")
        if not self.prefixes:
            raise ValueError("at least one prefix is required")
        object.__setattr__(self, "_prefix_tokens", tuple(tuple(p.lower().split()) for p in self.prefixes))
        object.__setattr__(self, "_booster_set", frozenset(self.boosters))
        polarity = {a: POSITIVE for a in self.positive_adjectives}
        polarity.update({a: NEGATIVE for a in self.negative_adjectives})
        object.__setattr__(self, "_polarity", polarity)

    def polarity_of(self, adjective: str) -> str | None:
        return self._polarity.get(adjective)


@dataclass(frozen=True)
class FilterConfig:
    user_fraction_percentile: float = 95.0
    day_low_percentile: float = 5.0
    day_high_percentile: float = 95.0
    exclusion_hours: float = 24.0
    window_minutes: int = 360
    pool_hours: float = 24.0


@dataclass(frozen=True)
class LabelMatch:
    polarity: str
    adjective: str
    booster: str | None


@dataclass(frozen=True)
class AffectLabel:
    polarity: str
    adjective: str
    booster: str | None
    message_id: str
    t0: int


@dataclass(frozen=True)
class AnchoredTimeline:
    """One subject's messages around a single anchor.

    ``messages`` spans whole minutes -window..+window around t0, ``pool`` the
    +-pool_hours neighbourhood used by the null model. Neither contains the
    anchor or any other prefix-bearing message.
    """

    subject_id: str
    anchor: AffectLabel
    messages: tuple[Message, ...]
    pool: tuple[Message, ...]
    gender_label: str = "unknown"
    tz_offset_minutes: int = 0
    scores: tuple[float, ...] | None = None
    pool_scores: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Cohort:
    polarity: str
    timelines: tuple[AnchoredTimeline, ...]

    def __post_init__(self) -> None:
        for timeline in self.timelines:
            if timeline.anchor.polarity != self.polarity:
                raise ValueError("timeline polarity differs from cohort polarity")

    def __len__(self) -> int:
        return len(self.timelines)

    @property
    def is_scored(self) -> bool:
        return all(t.scores is not None and t.pool_scores is not None for t in self.timelines)

    def restrict_gender(self, gender: str) -> "Cohort":
        return Cohort(self.polarity, tuple(t for t in self.timelines if t.gender_label == gender))


@dataclass
class FilterStep:
    name: str
    subjects_removed: int = 0
    anchors_removed: int = 0
    messages_removed: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "subjects_removed": self.subjects_removed,
            "anchors_removed": self.anchors_removed,
            "messages_removed": self.messages_removed,
        }


@dataclass
class FilterReport:
    candidate_anchors: int = 0
    conflicting_messages: int = 0
    steps: list[FilterStep] = field(default_factory=list)
    positive_timelines: int = 0
    negative_timelines: int = 0
    cutoffs: dict = field(default_factory=dict)

    def step(self, name: str) -> FilterStep:
        for existing in self.steps:
            if existing.name == name:
                return existing
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "candidate_anchors": self.candidate_anchors,
            "conflicting_messages": self.conflicting_messages,
            "steps": [s.to_dict() for s in self.steps],
            "positive_timelines": self.positive_timelines,
            "negative_timelines": self.negative_timelines,
            "cutoffs": dict(self.cutoffs),
        }


def tokenize(text: str) -> list[str]:
    return [tok.strip(_PUNCT) for tok in text.translate(_APOSTROPHES).lower().split()]


def find_affect_matches(text: str, cfg: PatternConfig) -> list[LabelMatch]:
    low = text.translate(_APOSTROPHES).lower()
    if not any(p[-1] in low for p in cfg._prefix_tokens):
        return []
    tokens = tokenize(text)
    matches = []
    n = len(tokens)
    for i in range(n):
        for prefix in cfg._prefix_tokens:
            end = i + len(prefix)
            if end >= n or tuple(tokens[i:end]) != prefix:
                continue
            nxt = tokens[end]
            polarity = cfg.polarity_of(nxt)
            if polarity is not None:
                matches.append(LabelMatch(polarity, nxt, None))
            elif nxt in cfg._booster_set and end + 1 < n:
                polarity = cfg.polarity_of(tokens[end + 1])
                if polarity is not None:
                    matches.append(LabelMatch(polarity, tokens[end + 1], nxt))
    return matches


def detect_affect_label(text: str, cfg: PatternConfig) -> LabelMatch | None:
    """First affect-labeling statement in ``text``.

    Texts containing statements of both polarities are treated as no match.
    """
    matches = find_affect_matches(text, cfg)
    if not matches or len({m.polarity for m in matches}) > 1:
        return None
    return matches[0]


def contains_prefix(text: str, cfg: PatternConfig) -> bool:
    low = text.translate(_APOSTROPHES).lower()
    if not any(p[-1] in low for p in cfg._prefix_tokens):
        return False
    tokens = tokenize(text)
    for prefix in cfg._prefix_tokens:
        k = len(prefix)
        for i in range(len(tokens) - k + 1):
            if tuple(tokens[i : i + k]) == prefix:
                return True
    return False


def scan_corpus(timelines: Iterable[RawTimeline], cfg: PatternConfig) -> list[tuple[str, AffectLabel]]:
    """One entry per non-repost message carrying an affect label."""
    found = []
    for timeline in timelines:
        for message in timeline.messages:
            if message.is_repost:
                continue
            match = detect_affect_label(message.text, cfg)
            if match is not None:
                label = AffectLabel(match.polarity, match.adjective, match.booster, message.message_id, message.utc_time)
                found.append((timeline.subject_id, label))
    return found


def subject_timezone(messages: Sequence[Message]) -> int | None:
    """Most common offset among a subject's messages (smallest on ties)."""
    counts = Counter(m.tz_offset_minutes for m in messages if m.tz_offset_minutes is not None)
    if not counts:
        return None
    best = max(counts.values())
    return min(tz for tz, c in counts.items() if c == best)


def local_day(utc_time: int, tz_offset_minutes: int) -> int:
    return (utc_time + 60 * tz_offset_minutes) // 86400


def build_cohorts(
    timelines: Sequence[RawTimeline],
    labels: Sequence[tuple[str, AffectLabel]],
    cfg: PatternConfig | None = None,
    filter_cfg: FilterConfig | None = None,
) -> tuple[Cohort, Cohort, FilterReport]:
    """Apply the six timeline filters and anchor the surviving labels.

    Application order: reposts, timezone, per-subject label fraction, unusual
    days, prefix-bearing messages, 48-hour exclusion. Timezone goes second
    because day bucketing needs local time. Percentile cutoffs are nearest-rank;
    values strictly beyond a cutoff are removed.
    """
    cfg = cfg or PatternConfig()
    fcfg = filter_cfg or FilterConfig()
    report = FilterReport(candidate_anchors=len(labels))
    by_subject = {t.subject_id: t for t in timelines}

    labels_by_subject: dict[str, list[AffectLabel]] = defaultdict(list)
    for subject_id, label in labels:
        labels_by_subject[subject_id].append(label)

    # (1) reposts
    step = FilterStep("reposts")
    report.steps.append(step)
    own: dict[str, list[Message]] = {}
    for timeline in timelines:
        kept = [m for m in timeline.messages if not m.is_repost]
        step.messages_removed += len(timeline.messages) - len(kept)
        own[timeline.subject_id] = kept
    repost_ids = {m.message_id for t in timelines for m in t.messages if m.is_repost}
    for subject_id in list(labels_by_subject):
        kept_labels = [lab for lab in labels_by_subject[subject_id] if lab.message_id not in repost_ids]
        step.anchors_removed += len(labels_by_subject[subject_id]) - len(kept_labels)
        labels_by_subject[subject_id] = kept_labels
    all_labels = {sid: sorted(labs, key=lambda lab: lab.t0) for sid, labs in labels_by_subject.items() if labs}
    active = {sid: list(labs) for sid, labs in all_labels.items() if sid in own}

    # (5) timezone, applied early
    step = FilterStep("timezone")
    report.steps.append(step)
    tz_of: dict[str, int] = {}
    for subject_id in sorted(active):
        tz = subject_timezone(own[subject_id])
        if tz is None:
            step.subjects_removed += 1
            step.anchors_removed += len(active.pop(subject_id))
        else:
            tz_of[subject_id] = tz

    # (2) over-sharing subjects
    step = FilterStep("user_fraction")
    report.steps.append(step)
    if active:
        fractions = {sid: len(all_labels[sid]) / len(own[sid]) for sid in active}
        cutoff = nearest_rank(list(fractions.values()), fcfg.user_fraction_percentile)
        report.cutoffs["user_fraction"] = cutoff
        for subject_id in sorted(active):
            if fractions[subject_id] > cutoff:
                step.subjects_removed += 1
                step.anchors_removed += len(active.pop(subject_id))

    # (3) unusual days
    step = FilterStep("unusual_days")
    report.steps.append(step)
    if active:
        day_counts = Counter(local_day(lab.t0, tz_of[sid]) for sid, labs in active.items() for lab in labs)
        low = nearest_rank(list(day_counts.values()), fcfg.day_low_percentile)
        high = nearest_rank(list(day_counts.values()), fcfg.day_high_percentile)
        report.cutoffs["day_low"] = low
        report.cutoffs["day_high"] = high
        for subject_id in sorted(active):
            kept = []
            for lab in active[subject_id]:
                count = day_counts[local_day(lab.t0, tz_of[subject_id])]
                if low <= count <= high:
                    kept.append(lab)
            step.anchors_removed += len(active[subject_id]) - len(kept)
            if kept:
                active[subject_id] = kept
            else:
                step.subjects_removed += 1
                del active[subject_id]

    # (4) prefix-bearing messages that are not anchors
    step = FilterStep("prefix_messages")
    report.steps.append(step)
    clean: dict[str, list[Message]] = {}
    anchor_ids = {lab.message_id for labs in active.values() for lab in labs}
    for subject_id in sorted(active):
        kept = []
        for message in own[subject_id]:
            if message.message_id in anchor_ids:
                continue
            if contains_prefix(message.text, cfg):
                step.messages_removed += 1
                if len({m.polarity for m in find_affect_matches(message.text, cfg)}) > 1:
                    report.conflicting_messages += 1
                continue
            kept.append(message)
        clean[subject_id] = kept

    # (6) more than one expression within +-exclusion_hours
    step = FilterStep("overlap_48h")
    report.steps.append(step)
    horizon = int(fcfg.exclusion_hours * 3600)
    for subject_id in sorted(active):
        times = [lab.t0 for lab in all_labels[subject_id]]
        kept = []
        for lab in active[subject_id]:
            lo, hi = bisect_left(times, lab.t0 - horizon), bisect_right(times, lab.t0 + horizon)
            if hi - lo > 1:
                continue
            kept.append(lab)
        step.anchors_removed += len(active[subject_id]) - len(kept)
        if kept:
            active[subject_id] = kept
        else:
            step.subjects_removed += 1
            del active[subject_id]

    positive, negative = [], []
    window = fcfg.window_minutes * 60
    pool_span = int(fcfg.pool_hours * 3600)
    for subject_id in sorted(active):
        messages = clean[subject_id]
        times = [m.utc_time for m in messages]
        anchors_by_id = {m.message_id: m for m in own[subject_id]}
        for lab in active[subject_id]:
            pool = tuple(messages[bisect_left(times, lab.t0 - pool_span) : bisect_right(times, lab.t0 + pool_span)])
            # whole minutes -window .. +window inclusive, i.e. offsets floor((t - t0)/60) in [-360, 360]
            lo = bisect_left(times, lab.t0 - window)
            hi = bisect_left(times, lab.t0 + window + 60)
            anchored = AnchoredTimeline(
                subject_id=subject_id,
                anchor=lab,
                messages=tuple(messages[lo:hi]),
                pool=pool,
                gender_label=anchors_by_id[lab.message_id].gender_label,
                tz_offset_minutes=tz_of[subject_id],
            )
            (positive if lab.polarity == POSITIVE else negative).append(anchored)

    report.positive_timelines = len(positive)
    report.negative_timelines = len(negative)
    return Cohort(POSITIVE, tuple(positive)), Cohort(NEGATIVE, tuple(negative)), report


def score_cohort(cohort: Cohort, scorer) -> Cohort:
    """Attach valence scores to every message and pool message."""
    scored = []
    for timeline in cohort.timelines:
        pool_scores = tuple(scorer.score(m.text) for m in timeline.pool)
        by_id = {m.message_id: s for m, s in zip(timeline.pool, pool_scores)}
        scores = tuple(by_id[m.message_id] if m.message_id in by_id else scorer.score(m.text) for m in timeline.messages)
        scored.append(replace(timeline, scores=scores, pool_scores=pool_scores))
    return Cohort(cohort.polarity, tuple(scored))


def load_config(path: str | Path | None) -> tuple[PatternConfig, FilterConfig]:
    """Read ``[patterns]`` and ``[filters]`` tables from a TOML file; defaults otherwise."""
    if path is None:
        return PatternConfig(), FilterConfig()
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    patterns = dict(data.get("patterns", {}))
    boosters_file = patterns.pop("boosters_file", None)
    if boosters_file is not None:
        base = Path(path).parent
        text = (base / boosters_file).read_text(encoding="utf-8")
        patterns["boosters"] = [line.strip() for line in text.splitlines() if line.strip()]
    for key in ("prefixes", "boosters", "positive_adjectives", "negative_adjectives"):
        if key in patterns:
            patterns[key] = tuple(patterns[key])
    return PatternConfig(**patterns), FilterConfig(**data.get("filters", {}))
