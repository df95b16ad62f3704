from __future__ import annotations

import numpy as np
import pytest

from affectflow.affect import PatternConfig, scan_corpus
from affectflow.ingest import serialize_timelines
from affectflow.sentiment import RuleScorer, load_lexicon
from affectflow.synthgen import EpisodeSpec, TextBank, generate_cohort, load_spec

SCORER = RuleScorer()


def _non_anchor(timelines):
    for tl in timelines:
        t0 = next(m.utc_time for m in tl.messages if m.message_id.endswith("-a"))
        for m in tl.messages:
            if not m.message_id.endswith("-a"):
                yield (m.utc_time - t0) // 60, SCORER.score(m.text)


def test_flat_spec_scores_at_baseline():
    spec = EpisodeSpec(amplitude=0.0, decay_amplitude=0.0, decay_baseline=0.14, noise=0.0)
    corpus, report = generate_cohort(spec, 20, seed=3)
    scores = np.array([s for _, s in _non_anchor(corpus)])
    assert len(scores) > 500
    assert np.abs(scores - 0.14).max() <= 0.02
    assert report.max_quantization_error <= 0.02


def test_text_bank_tolerance():
    bank = TextBank(load_lexicon())
    for v in np.linspace(-0.95, 0.95, 77):
        assert abs(bank.realized(float(v)) - v) <= 0.02


def test_rerun_is_byte_identical():
    a, _ = generate_cohort(EpisodeSpec(), 1000, seed=11)
    b, _ = generate_cohort(EpisodeSpec(), 1000, seed=11)
    assert "".join(serialize_timelines(a)) == "".join(serialize_timelines(b))
    c, _ = generate_cohort(EpisodeSpec(), 50, seed=12)
    assert "".join(serialize_timelines(a[:50])) != "".join(serialize_timelines(c))


def test_every_subject_has_one_detectable_anchor():
    corpus, _ = generate_cohort(EpisodeSpec(polarity="negative", amplitude=-0.02, decay_amplitude=-0.03), 300, seed=5)
    labels = scan_corpus(corpus, PatternConfig())
    assert len(labels) == 300
    assert {sid for sid, _ in labels} == {tl.subject_id for tl in corpus}
    assert all(lab.polarity == "negative" for _, lab in labels)


def test_window_means_follow_curve():
    spec = EpisodeSpec()
    corpus, _ = generate_cohort(spec, 400, seed=6)
    by_minute = {}
    for m, s in _non_anchor(corpus):
        by_minute.setdefault(int(m), []).append(s)
    checked = 0
    for m, vals in by_minute.items():
        if len(vals) < 30 or abs(m) > 120:
            continue
        expected = float(spec.curve([m])[0])
        assert abs(np.mean(vals) - expected) <= 3 * (spec.noise + 0.02) / np.sqrt(len(vals))
        checked += 1
    assert checked > 50


def test_unreachable_target_rejected():
    with pytest.raises(ValueError, match="reachable"):
        generate_cohort(EpisodeSpec(baseline=0.97, decay_baseline=0.97), 1, seed=0)


def test_spec_validation_and_loading(tmp_path):
    with pytest.raises(ValueError):
        EpisodeSpec(onset=5)
    with pytest.raises(ValueError):
        EpisodeSpec(noise=-1)
    path = tmp_path / "s.toml"
    path.write_text("[episode]\nnoise = 0.1\noutside_baseline = 0.11\n", encoding="utf-8")
    spec = load_spec(path)
    assert spec.noise == 0.1 and spec.outside == 0.11
    assert spec.curve([-500])[0] == 0.11 and spec.curve([0])[0] == pytest.approx(0.172)
    path.write_text("[episode]\nbogus = 1\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_spec(path)
