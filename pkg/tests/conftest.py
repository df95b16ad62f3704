from __future__ import annotations

from pathlib import Path

import pytest

from affectflow.ingest import write_corpus
from affectflow.synthgen import EpisodeSpec, generate_cohort

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

# (criterion number, line) pairs filled in by the acceptance tests
ACCEPTANCE_LINES: list[tuple[int, str]] = []


def record(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Positive and negative synthetic cohorts (1500 subjects each) in one JSONL file."""
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    pos, _ = generate_cohort(EpisodeSpec(outside_baseline=0.11, gender_shift=-0.04), 1500, seed=21, subject_prefix="p")
    neg_spec = EpisodeSpec(
        polarity="negative", baseline=0.10, amplitude=-0.04, lambda_up=0.05, decay_amplitude=-0.04,
        decay_baseline=0.10, lambda_down=-0.1, onset=-63, end=20, outside_baseline=0.11, gender_shift=-0.04,
    )
    neg, _ = generate_cohort(neg_spec, 1500, seed=22, subject_prefix="n")
    write_corpus(pos + neg, path)
    return path
