"""Rule-based valence scoring on the VADER contract.

Each lexicon hit contributes its mean human rating, adjusted by boosters and
negators among the three preceding tokens, ALL-CAPS emphasis, and trailing
exclamation marks. The sum ``s`` is squashed to ``s / sqrt(s**2 + 15)``.

Constants are those of the public VADER reference implementation.
"""

from __future__ import annotations

import logging
import math
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol

logger = logging.getLogger(__name__)

BOOSTER_INCREMENT = 0.293
CAPS_INCREMENT = 0.733
NEGATION_SCALAR = -0.74
NORMALIZATION_ALPHA = 15.0
EXCLAMATION_INCREMENT = 0.292
MAX_EXCLAMATIONS = 4
# damping of a modifier 1, 2 and 3 tokens before the sentiment word
DISTANCE_DAMPING = (1.0, 0.95, 0.9)


@dataclass(frozen=True)
class Lexicon:
    entries: Mapping[str, float]
    boosters: Mapping[str, float]
    negators: frozenset[str]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("lexicon is empty")
        overlap = set(self.boosters) & self.negators
        if overlap:
            raise ValueError(f"tokens both booster and negator: {sorted(overlap)}")

    def __len__(self) -> int:
        return len(self.entries)


def _data_path(name: str) -> Path:
    return Path(str(resources.files("affectflow") / "data" / name))


DEFAULT_LEXICON_PATH = _data_path("vader_lexicon.tsv")
DEFAULT_BOOSTERS_PATH = _data_path("scorer_boosters.tsv")
DEFAULT_NEGATORS_PATH = _data_path("negators.txt")


def _read_rating_table(path: Path, what: str) -> dict[str, float]:
    table: dict[str, float] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0]:
                raise ValueError(f"{path}:{line_no}: malformed {what} row")
            try:
                rating = float(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: rating {parts[1]!r} is not a number") from None
            if not math.isfinite(rating):
                raise ValueError(f"{path}:{line_no}: non-finite rating")
            if parts[0] in table:
                logger.warning("%s:%d: duplicate %s token %r, last value wins", path, line_no, what, parts[0])
            table[parts[0]] = rating
    return table


def load_lexicon(
    path: str | Path | None = None,
    boosters_path: str | Path | None = None,
    negators_path: str | Path | None = None,
) -> Lexicon:
    """Load ``<token>\\t<mean_rating>`` rows (extra columns ignored).

    Missing files raise ``FileNotFoundError``; malformed rows raise
    ``ValueError`` naming the line.
    """
    entries = _read_rating_table(Path(path or DEFAULT_LEXICON_PATH), "lexicon")
    boosters = _read_rating_table(Path(boosters_path or DEFAULT_BOOSTERS_PATH), "booster")
    with open(Path(negators_path or DEFAULT_NEGATORS_PATH), encoding="utf-8") as handle:
        negators = frozenset(line.strip().lower() for line in handle if line.strip())
    return Lexicon(entries=entries, boosters=boosters, negators=negators)


def tokenize(text: str, lexicon: Lexicon) -> list[str]:
    tokens = []
    for raw in text.split():
        # emoticons such as ":)" are lexicon entries; keep them whole
        if raw.lower() in lexicon.entries:
            tokens.append(raw)
            continue
        stripped = raw.strip(string.punctuation)
        if stripped:
            tokens.append(stripped)
    return tokens


def _is_negator(token: str, negators: frozenset[str]) -> bool:
    return token in negators or "n't" in token


def score(text: str, lexicon: Lexicon) -> float:
    """Valence of ``text`` in [-1, 1]; 0.0 when no lexicon token occurs."""
    tokens = tokenize(text, lexicon)
    if not tokens:
        return 0.0
    lowered = [t.lower() for t in tokens]
    n_caps = sum(1 for t in tokens if t.isupper())
    caps_differential = 0 < n_caps < len(tokens)

    total = 0.0
    hits = 0
    for i, (token, low) in enumerate(zip(tokens, lowered)):
        if low in lexicon.boosters or low not in lexicon.entries:
            continue
        hits += 1
        valence = lexicon.entries[low]
        if caps_differential and token.isupper():
            valence += CAPS_INCREMENT if valence > 0 else -CAPS_INCREMENT
        for distance in range(1, 4):
            if i - distance < 0:
                break
            prev, prev_low = tokens[i - distance], lowered[i - distance]
            if prev_low in lexicon.entries:
                continue
            boost = lexicon.boosters.get(prev_low, 0.0)
            if boost:
                if valence < 0:
                    boost = -boost
                if caps_differential and prev.isupper():
                    boost += CAPS_INCREMENT if valence > 0 else -CAPS_INCREMENT
                valence += boost * DISTANCE_DAMPING[distance - 1]
            if _is_negator(prev_low, lexicon.negators):
                valence *= NEGATION_SCALAR
        total += valence

    if hits == 0:
        return 0.0
    emphasis = min(text.count("!"), MAX_EXCLAMATIONS) * EXCLAMATION_INCREMENT
    if total > 0:
        total += emphasis
    elif total < 0:
        total -= emphasis
    return normalize(total)


def normalize(total: float, alpha: float = NORMALIZATION_ALPHA) -> float:
    if abs(total) > 1e150:
        # total * total would overflow
        return math.copysign(1.0, total)
    value = total / math.sqrt(total * total + alpha)
    return max(-1.0, min(1.0, value))


class Scorer(Protocol):
    def score(self, text: str) -> float: ...


class RuleScorer:
    """Default scorer. Memoizes per text, since corpora repeat short texts a lot."""

    def __init__(self, lexicon: Lexicon | None = None, cache_size: int = 200_000):
        self.lexicon = lexicon if lexicon is not None else load_lexicon()
        self._cache: dict[str, float] = {}
        self._cache_size = cache_size

    def score(self, text: str) -> float:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        value = score(text, self.lexicon)
        if len(self._cache) < self._cache_size:
            self._cache[text] = value
        return value
