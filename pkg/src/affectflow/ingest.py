"""Parsing and storage of per-subject message timelines.

Records are JSON Lines, one message per line::

    {"subject_id": "u1", "message_id": "m1", "utc_time": "2012-03-04T12:34:56Z",
     "tz_offset_minutes": -300, "text": "...", "is_repost": false,
     "gender_label": "female"}

Timestamps are RFC 3339 strings on disk and integer epoch seconds in memory.
"""

from __future__ import annotations

import glob
import gzip
import io
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, TextIO

logger = logging.getLogger(__name__)

GENDERS = ("male", "female", "unknown")
MAX_TEXT_CHARS = 2000
MAX_ERROR_SAMPLES = 50


@dataclass(frozen=True, slots=True)
class Message:
    subject_id: str
    message_id: str
    utc_time: int
    tz_offset_minutes: int | None
    text: str
    is_repost: bool = False
    gender_label: str = "unknown"

    @property
    def local_time(self) -> int | None:
        if self.tz_offset_minutes is None:
            return None
        return self.utc_time + 60 * self.tz_offset_minutes


@dataclass(frozen=True)
class RawTimeline:
    subject_id: str
    messages: tuple[Message, ...]


@dataclass
class IngestReport:
    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    duplicates: int = 0
    errors: list[dict] = field(default_factory=list)

    def record_error(self, line_no: int, reason: str) -> None:
        self.malformed += 1
        if len(self.errors) < MAX_ERROR_SAMPLES:
            self.errors.append({"line": line_no, "reason": reason})

    def to_dict(self) -> dict:
        return {
            "lines": self.lines,
            "parsed": self.parsed,
            "malformed": self.malformed,
            "duplicates": self.duplicates,
            "errors": list(self.errors),
        }


def parse_timestamp(value: str) -> int:
    """RFC 3339 string to epoch seconds (floored). Offset-less strings are rejected."""
    if not isinstance(value, str):
        raise ValueError("utc_time must be a string")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp without offset: {value!r}")
    return int(dt.timestamp() // 1)


def format_timestamp(epoch_seconds: int) -> str:
    return datetime.fromtimestamp(epoch_seconds, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def message_from_record(record: dict) -> Message:
    if not isinstance(record, dict):
        raise ValueError("record is not an object")
    try:
        subject_id = record["subject_id"]
        message_id = record["message_id"]
        utc_raw = record["utc_time"]
        text = record["text"]
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]}") from None
    if not isinstance(subject_id, str) or not subject_id:
        raise ValueError("subject_id must be a non-empty string")
    if not isinstance(message_id, str) or not message_id:
        raise ValueError("message_id must be a non-empty string")
    if not isinstance(text, str):
        raise ValueError("text must be a string")
    if len(text) > MAX_TEXT_CHARS:
        raise ValueError(f"text longer than {MAX_TEXT_CHARS} characters")
    utc_time = parse_timestamp(utc_raw)

    tz = record.get("tz_offset_minutes")
    if tz is not None and (isinstance(tz, bool) or not isinstance(tz, int)):
        raise ValueError("tz_offset_minutes must be an integer or null")
    if tz is not None and abs(tz) > 18 * 60:
        raise ValueError("tz_offset_minutes out of range")

    is_repost = record.get("is_repost", False)
    if not isinstance(is_repost, bool):
        raise ValueError("is_repost must be a boolean")

    gender = record.get("gender_label") or "unknown"
    if gender not in GENDERS:
        raise ValueError(f"unknown gender_label {gender!r}")

    return Message(subject_id, message_id, utc_time, tz, text, is_repost, gender)


def message_to_record(message: Message) -> dict:
    return {
        "subject_id": message.subject_id,
        "message_id": message.message_id,
        "utc_time": format_timestamp(message.utc_time),
        "tz_offset_minutes": message.tz_offset_minutes,
        "text": message.text,
        "is_repost": message.is_repost,
        "gender_label": message.gender_label,
    }


def sort_and_dedupe(timeline: RawTimeline) -> RawTimeline:
    """Order messages by time and drop later copies of a repeated message_id."""
    seen: set[str] = set()
    kept = []
    # stable sort: equal timestamps keep input order
    for message in sorted(timeline.messages, key=lambda m: m.utc_time):
        if message.message_id in seen:
            continue
        seen.add(message.message_id)
        kept.append(message)
    return RawTimeline(timeline.subject_id, tuple(kept))


def parse_corpus(stream: Iterable[str]) -> tuple[list[RawTimeline], IngestReport]:
    """Parse JSON Lines into timelines grouped by subject.

    Malformed lines are skipped and counted in the report; they never abort
    the parse. Timelines come back sorted by subject_id, messages by time.
    Message ids must be unique across the corpus, so later copies (by time)
    are dropped and counted as duplicates.
    """
    report = IngestReport()
    messages: list[Message] = []
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        report.lines += 1
        try:
            record = json.loads(line)
            messages.append(message_from_record(record))
        except (ValueError, TypeError) as exc:
            report.record_error(line_no, str(exc))

    messages.sort(key=lambda m: m.utc_time)
    seen: set[str] = set()
    grouped: dict[str, list[Message]] = defaultdict(list)
    for message in messages:
        if message.message_id in seen:
            report.duplicates += 1
            continue
        seen.add(message.message_id)
        grouped[message.subject_id].append(message)
    report.parsed = len(seen)
    if report.malformed:
        logger.warning("skipped %d malformed line(s)", report.malformed)
    timelines = [RawTimeline(sid, tuple(grouped[sid])) for sid in sorted(grouped)]
    return timelines, report


def serialize_timelines(timelines: Iterable[RawTimeline]) -> Iterator[str]:
    for timeline in timelines:
        for message in timeline.messages:
            yield json.dumps(message_to_record(message), ensure_ascii=False, separators=(",", ":")) + "\n"


def open_text(path: str | Path, mode: str = "r") -> TextIO:
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def _chained_lines(paths: list[Path]) -> Iterator[str]:
    for path in paths:
        with open_text(path) as handle:
            yield from handle


def read_corpus(pattern: str | Path | list) -> tuple[list[RawTimeline], IngestReport]:
    """Read one or more JSONL files (glob patterns allowed, ``.gz`` transparently)."""
    patterns = pattern if isinstance(pattern, list) else [pattern]
    paths: list[Path] = []
    for item in patterns:
        matches = sorted(glob.glob(str(item)))
        if not matches:
            raise FileNotFoundError(f"no input matches {item}")
        paths.extend(Path(m) for m in matches)
    return parse_corpus(_chained_lines(paths))


def write_corpus(timelines: Iterable[RawTimeline], path: str | Path) -> None:
    with open_text(path, "w") as handle:
        handle.writelines(serialize_timelines(timelines))
