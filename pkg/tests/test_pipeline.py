from __future__ import annotations

import json

import pytest

from affectflow import artifacts
from affectflow.cli import main
from affectflow.ingest import write_corpus
from affectflow.pipeline import RunConfig, StageError, emit_table, run_pipeline
from affectflow.synthgen import EpisodeSpec, generate_cohort


def quick_config(corpus, out, **kw):
    base = dict(replicates=60, kmax=3, gmm_restarts=2, plots=False)
    base.update(kw)
    return RunConfig(corpus=[str(corpus)], out_dir=out, **base)


@pytest.fixture(scope="module")
def full_run(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    bundle = run_pipeline(quick_config(small_corpus, out, plots=True))
    return out, bundle


def test_all_outputs_written(full_run):
    out, bundle = full_run
    for name in ("series", "volumes", "null", "change", "durations", "fits", "peaks", "gmm", "rdd", "filters", "ingest"):
        data = json.loads((out / f"{name}.json").read_text())
        assert data["schema_version"] == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] and manifest["failed"] is None
    for name in ("fits.csv", "durations.csv", "gender_spans.csv", "series.svg", "bands.svg"):
        assert (out / name).exists()
    assert bundle.completed[-1] == "report"


def test_durations_table_layout(full_run):
    _, bundle = full_run
    lines = emit_table(bundle.artifacts, "durations").splitlines()
    assert lines[0].startswith("method,positive_length")
    assert [line.split(",")[0] for line in lines[1:]] == ["cusum", "ci_divergence", "median_excursion", "average"]


def test_fits_table_ranked(full_run):
    _, bundle = full_run
    rows = [line.split(",") for line in emit_table(bundle.artifacts, "fits").splitlines()[1:]]
    pos = [r for r in rows if r[0] == "positive"]
    assert len(pos) == 4
    sse = [float(r[-1]) for r in pos]
    assert sse == sorted(sse)


def test_gender_rows(full_run):
    _, bundle = full_run
    groups = [row["group"] for row in bundle.artifacts["rdd"]["gender_spans"]]
    assert groups == ["Female+", "Male+", "Female-", "Male-"]


def test_empty_bundle_table_errors():
    with pytest.raises((KeyError, ValueError)):
        emit_table({}, "durations")
    with pytest.raises(ValueError):
        emit_table({"fits": {}}, "fits")
    with pytest.raises(ValueError):
        emit_table({"fits": {}}, "nonsense")


def test_partial_run_and_stage_rerun(small_corpus, tmp_path, full_run):
    out = tmp_path / "part"
    bundle = run_pipeline(quick_config(small_corpus, out), stages=["changepoint"])
    assert bundle.completed == ["ingest", "detect", "score", "epoch", "null", "changepoint"]
    assert sorted(p.name for p in out.glob("*.json")) == ["change.json", "durations.json", "manifest.json"]
    # the stage output matches the full run byte for byte
    full_out, _ = full_run
    assert (out / "change.json").read_bytes() == (full_out / "change.json").read_bytes()


def test_missing_corpus_fails_before_running(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_pipeline(quick_config(tmp_path / "none.jsonl", tmp_path / "o"))


def test_stage_error_names_stage(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(StageError) as info:
        run_pipeline(quick_config(path, tmp_path / "o"), stages=["fit"])
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["failed"] == info.value.stage and not manifest["complete"]


def test_flat_corpus_has_no_significant_interval(tmp_path):
    spec = EpisodeSpec(amplitude=0.0, decay_amplitude=0.0, decay_baseline=0.14)
    corpus, _ = generate_cohort(spec, 400, seed=31)
    write_corpus(corpus, tmp_path / "flat.jsonl")
    bundle = run_pipeline(quick_config(tmp_path / "flat.jsonl", tmp_path / "o", gender=False), stages=["changepoint"])
    cusum = bundle.artifacts["change"]["positive"]["cusum"]
    assert cusum["intervals"] == []
    assert bundle.artifacts["durations"]["positive"]["methods"][0]["span"] is None


def test_config_from_toml(tmp_path, small_corpus):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'[paths]\ncorpus = "{small_corpus}"\nout_dir = "res"\n[analysis]\nreplicates = 50\nseed = 3\n', encoding="utf-8"
    )
    config = RunConfig.from_toml(cfg)
    assert config.replicates == 50 and config.out_dir == tmp_path / "res"
    cfg.write_text('[paths]\ncorpus = "x"\n[analysis]\nbogus = 1\n', encoding="utf-8")
    with pytest.raises(ValueError):
        RunConfig.from_toml(cfg)


def test_cli_stage_by_stage(small_corpus, tmp_path, full_run):
    d = tmp_path
    assert main(["ingest", "--input", str(small_corpus), "--out", str(d / "corpus.jsonl"), "--report", str(d / "errors.json")]) == 0
    assert main(["detect", "--corpus", str(d / "corpus.jsonl"), "--out", str(d / "cohorts.jsonl"), "--report", str(d / "filters.json")]) == 0
    assert main(["score", "--corpus", str(d / "cohorts.jsonl"), "--out", str(d / "scored.jsonl")]) == 0
    assert main(["epoch", "--in", str(d / "scored.jsonl"), "--out", str(d / "series.json")]) == 0
    assert main(["null", "--cohorts", str(d / "scored.jsonl"), "--series", str(d / "series.json"), "--replicates", "60", "--seed", "42", "--out", str(d / "null.json")]) == 0
    assert main(["detect-change", "--series", str(d / "series.json"), "--null", str(d / "null.json"), "--out", str(d / "change.json"), "--durations", str(d / "durations.json")]) == 0
    assert main(["fit", "--series", str(d / "series.json"), "--spans", str(d / "change.json"), "--out", str(d / "fits.json")]) == 0
    assert main(["peaks", "--cohorts", str(d / "scored.jsonl"), "--spans", str(d / "change.json"), "--out", str(d / "peaks.json")]) == 0
    assert main(["gmm", "--peaks", str(d / "peaks.json"), "--kmax", "2", "--restarts", "2", "--out", str(d / "gmm.json")]) == 0
    for g in ("male", "female"):
        assert main(["epoch", "--in", str(d / "scored.jsonl"), "--window", "10", "--gender", g, "--out", str(d / f"series_{g}.json")]) == 0
    assert main(["rdd", "--male", str(d / "series_male.json"), "--female", str(d / "series_female.json"), "--out", str(d / "rdd.json")]) == 0
    full_out, _ = full_run
    # the stepwise commands agree with the one-shot run
    for name in ("series", "change", "durations", "fits"):
        assert artifacts.read_json(d / f"{name}.json") == artifacts.read_json(full_out / f"{name}.json"), name
    assert "positive" in artifacts.read_json(d / "rdd.json")


def test_cli_errors_exit_nonzero(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "x.jsonl")]) == 2
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'[paths]\ncorpus = "{tmp_path / "empty.jsonl"}"\n', encoding="utf-8")
    (tmp_path / "empty.jsonl").write_text("", encoding="utf-8")
    assert main(["run", "--config", str(cfg), "--stages", "fit"]) == 1


def test_cli_synth(tmp_path):
    spec = tmp_path / "s.toml"
    spec.write_text("[episode]\nnoise = 0.1\n", encoding="utf-8")
    assert main(["synth", "--spec", str(spec), "--subjects", "5", "--seed", "1", "--subject-prefix", "q", "--out", str(tmp_path / "o.jsonl")]) == 0
    first = json.loads((tmp_path / "o.jsonl").read_text().splitlines()[0])
    assert first["subject_id"].startswith("q")
