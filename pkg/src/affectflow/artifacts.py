"""Reading and writing the JSON artifacts passed between stages.

Every JSON artifact carries ``schema_version`` and is written with sorted
keys and fixed separators, so equal content always gives equal bytes.
Cohorts are JSON Lines, one anchored timeline per line.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .affect import AffectLabel, AnchoredTimeline, Cohort, NEGATIVE, POSITIVE
from .epoch import HORIZON_MINUTES
from .ingest import message_from_record, message_to_record, open_text

SCHEMA_VERSION = 1


def _plain(value):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def dumps(payload: dict) -> str:
    body = dict(payload)
    body.setdefault("schema_version", SCHEMA_VERSION)
    return json.dumps(_plain(body), sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8")
    return path


def read_json(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {version!r}")
    return data


def timeline_to_record(timeline: AnchoredTimeline) -> dict:
    anchor = timeline.anchor
    record = {
        "subject_id": timeline.subject_id,
        "polarity": anchor.polarity,
        "anchor": {
            "polarity": anchor.polarity,
            "adjective": anchor.adjective,
            "booster": anchor.booster,
            "message_id": anchor.message_id,
            "t0": anchor.t0,
        },
        "gender_label": timeline.gender_label,
        "tz_offset_minutes": timeline.tz_offset_minutes,
        "pool": [message_to_record(m) for m in timeline.pool],
    }
    if timeline.pool_scores is not None:
        record["pool_scores"] = list(timeline.pool_scores)
    return record


def timeline_from_record(record: dict) -> AnchoredTimeline:
    a = record["anchor"]
    anchor = AffectLabel(a["polarity"], a["adjective"], a.get("booster"), a["message_id"], int(a["t0"]))
    pool = tuple(message_from_record(m) for m in record["pool"])
    pool_scores = record.get("pool_scores")
    lo, hi = anchor.t0 - 60 * HORIZON_MINUTES, anchor.t0 + 60 * (HORIZON_MINUTES + 1)
    inside = [i for i, m in enumerate(pool) if lo <= m.utc_time < hi]
    return AnchoredTimeline(
        subject_id=record["subject_id"],
        anchor=anchor,
        messages=tuple(pool[i] for i in inside),
        pool=pool,
        gender_label=record.get("gender_label", "unknown"),
        tz_offset_minutes=int(record["tz_offset_minutes"]),
        scores=None if pool_scores is None else tuple(float(pool_scores[i]) for i in inside),
        pool_scores=None if pool_scores is None else tuple(float(s) for s in pool_scores),
    )


def write_cohorts(path: str | Path, cohorts: Iterable[Cohort]) -> None:
    with open_text(path, "w") as handle:
        for cohort in cohorts:
            for timeline in cohort.timelines:
                handle.write(json.dumps(timeline_to_record(timeline), sort_keys=True, separators=(",", ":")) + "\n")


def read_cohorts(path: str | Path) -> dict[str, Cohort]:
    """Cohorts keyed by polarity (both keys always present)."""
    grouped: dict[str, list[AnchoredTimeline]] = {POSITIVE: [], NEGATIVE: []}
    with open_text(path) as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                timeline = timeline_from_record(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad cohort record ({exc})") from None
            grouped[timeline.anchor.polarity].append(timeline)
    return {p: Cohort(p, tuple(ts)) for p, ts in grouped.items()}
