from __future__ import annotations

import json

import pytest

from affectflow.ingest import (
    Message,
    RawTimeline,
    parse_corpus,
    read_corpus,
    serialize_timelines,
    sort_and_dedupe,
    write_corpus,
)


def record(sid, mid, ts, text="hello", **extra):
    rec = {"subject_id": sid, "message_id": mid, "utc_time": ts, "tz_offset_minutes": 60, "text": text, "is_repost": False}
    rec.update(extra)
    return json.dumps(rec)


def test_groups_by_subject():
    lines = [
        record("a", "1", "2013-01-01T00:00:00Z"),
        record("b", "2", "2013-01-01T00:01:00Z"),
        record("a", "3", "2013-01-01T00:02:00Z"),
    ]
    timelines, report = parse_corpus(lines)
    assert [t.subject_id for t in timelines] == ["a", "b"]
    assert [m.message_id for m in timelines[0].messages] == ["1", "3"]
    assert report.malformed == 0 and report.parsed == 3


def test_empty_stream():
    timelines, report = parse_corpus([])
    assert timelines == [] and report.malformed == 0


def test_bad_timestamp_is_skipped_and_counted():
    lines = [
        record("a", "1", "2013-01-01T00:00:00Z"),
        record("a", "2", "yesterday at noon"),
        record("a", "3", "2013-01-01T00:02:00+01:00"),
        "{not json",
    ]
    timelines, report = parse_corpus(lines)
    assert report.malformed == 2
    assert [e["line"] for e in report.errors] == [2, 4]
    assert len(timelines[0].messages) == 2


def test_timestamp_offsets_and_gender_default():
    timelines, _ = parse_corpus([record("a", "1", "2013-01-01T01:00:00+01:00")])
    msg = timelines[0].messages[0]
    assert msg.utc_time == 1356998400
    assert msg.gender_label == "unknown"
    assert msg.local_time == msg.utc_time + 3600


@pytest.mark.parametrize(
    "extra",
    [{"gender_label": "robot"}, {"is_repost": "yes"}, {"tz_offset_minutes": 5000}, {"text": "x" * 2001}],
)
def test_invalid_fields_rejected(extra):
    _, report = parse_corpus([record("a", "1", "2013-01-01T00:00:00Z", **extra)])
    assert report.malformed == 1


def test_long_text_allowed():
    timelines, report = parse_corpus([record("a", "1", "2013-01-01T00:00:00Z", text="y" * 500)])
    assert report.malformed == 0 and len(timelines[0].messages[0].text) == 500


def _msgs(times, ids=None):
    ids = ids or [str(i) for i in range(len(times))]
    return tuple(Message("s", i, t, 0, "t") for i, t in zip(ids, times))


def test_sort_and_dedupe():
    sorted_tl = RawTimeline("s", _msgs([1, 2, 3]))
    assert sort_and_dedupe(sorted_tl) == sorted_tl
    rev = sort_and_dedupe(RawTimeline("s", _msgs([5, 4, 3, 2, 1])))
    assert [m.utc_time for m in rev.messages] == [1, 2, 3, 4, 5]
    dup = sort_and_dedupe(RawTimeline("s", _msgs([9, 4, 6], ["x", "x", "y"])))
    assert [(m.message_id, m.utc_time) for m in dup.messages] == [("x", 4), ("y", 6)]


def test_duplicates_across_corpus_counted():
    lines = [record("a", "1", "2013-01-01T00:05:00Z"), record("a", "1", "2013-01-01T00:00:00Z")]
    timelines, report = parse_corpus(lines)
    assert report.duplicates == 1
    assert timelines[0].messages[0].utc_time == 1356998400


def test_round_trip(tmp_path):
    lines = [
        record("a", "1", "2013-01-01T00:00:00Z", text="I feel good ☺", gender_label="female"),
        record("a", "2", "2013-01-01T00:00:30Z", is_repost=True),
        record("b", "3", "2013-01-02T10:00:00Z", tz_offset_minutes=None),
    ]
    timelines, _ = parse_corpus(lines)
    again, report = parse_corpus(list(serialize_timelines(timelines)))
    assert again == timelines and report.malformed == 0
    for name in ("c.jsonl", "c.jsonl.gz"):
        write_corpus(timelines, tmp_path / name)
        assert read_corpus(tmp_path / name)[0] == timelines


def test_missing_input_is_fatal(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_corpus(tmp_path / "nothing*.jsonl")
