"""Command-line entry point: ``affectflow <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .affect import POSITIVE, build_cohorts, load_config, scan_corpus, score_cohort
from .changepoint import ChangeReport, baseline_ci, cusum, estimate_duration, median_excursion
from .epoch import WindowSeries, peak_values, rolling_mean, window_series
from .ingest import read_corpus, write_corpus
from .mixture import contrary_fraction, select_k
from .nullmodel import SeriesBands, build_null, build_pool, ci_divergence, null_bands, null_reference, observed_bands
from .pipeline import STAGES, POLARITIES, RunConfig, StageError, cusum_params, detect_direction, fit_segments, run_pipeline
from .rdd import DiffSeries, rdd_fit
from .sentiment import RuleScorer, load_lexicon
from .stats import nearest_rank
from .synthgen import generate_cohort, load_spec

logger = logging.getLogger("affectflow")


def _series_entry(series: WindowSeries, smooth: int, keep_values: bool, timelines: int) -> dict:
    entry = series.to_dict(keep_values=keep_values)
    entry["smoothed"] = rolling_mean(series.means, smooth)
    entry["smooth_span"] = smooth
    entry["timelines"] = timelines
    return entry


def _load_series_arrays(entry: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    offsets = np.asarray(entry["offsets"], dtype=np.int64)
    means = np.array([np.nan if v is None else v for v in entry["means"]], dtype=float)
    smoothed = np.array([np.nan if v is None else v for v in entry["smoothed"]], dtype=float)
    return offsets, means, smoothed


def cmd_ingest(args) -> int:
    timelines, report = read_corpus(args.input)
    write_corpus(timelines, args.out)
    if args.report:
        artifacts.write_json(args.report, report.to_dict())
    logger.info("parsed %d messages for %d subjects (%d malformed)", report.parsed, len(timelines), report.malformed)
    return 0


def cmd_detect(args) -> int:
    timelines, _ = read_corpus(args.corpus)
    pattern_cfg, filter_cfg = load_config(args.config)
    labels = scan_corpus(timelines, pattern_cfg)
    pos, neg, report = build_cohorts(timelines, labels, pattern_cfg, filter_cfg)
    artifacts.write_cohorts(args.out, [pos, neg])
    if args.report:
        payload = report.to_dict()
        payload["labels"] = len(labels)
        artifacts.write_json(args.report, payload)
    logger.info("%d positive and %d negative timelines", len(pos), len(neg))
    return 0


def cmd_score(args) -> int:
    cohorts = artifacts.read_cohorts(args.corpus)
    scorer = RuleScorer(load_lexicon(args.lexicon) if args.lexicon else None)
    artifacts.write_cohorts(args.out, [score_cohort(c, scorer) for c in cohorts.values()])
    return 0


def _restrict(cohorts: dict, gender: str | None) -> dict:
    if gender is None:
        return cohorts
    return {p: c.restrict_gender(gender) for p, c in cohorts.items()}


def cmd_epoch(args) -> int:
    cohorts = _restrict(artifacts.read_cohorts(args.input), args.gender)
    payload = {}
    for p in POLARITIES:
        cohort = cohorts[p]
        if not len(cohort):
            payload[p] = {"timelines": 0}
            continue
        payload[p] = _series_entry(window_series(cohort, args.window), args.smooth, args.keep_values, len(cohort))
    artifacts.write_json(args.out, payload)
    return 0


def cmd_null(args) -> int:
    cohorts = _restrict(artifacts.read_cohorts(args.cohorts), args.gender)
    series = artifacts.read_json(args.series)
    payload = {"replicates": args.replicates, "seed": args.seed}
    for i, p in enumerate(POLARITIES):
        cohort = cohorts[p]
        if not len(cohort) or "offsets" not in series.get(p, {}):
            continue
        seed = args.seed + i
        s1 = window_series(cohort, series[p]["window_minutes"])
        pool = build_pool(cohort, exclude_window=args.exclude_window)
        null = build_null(cohort, s1, seed, pool)
        T, K = null_reference(null, series[p]["smooth_span"])
        sci = window_series(cohort, args.ci_window)
        obs = observed_bands(sci, args.replicates, seed)
        nul = null_bands(sci, pool, args.replicates, seed)
        payload[p] = {
            "T": T,
            "K": K,
            "null_means": null.means,
            "fallbacks": null.fallbacks + nul.fallbacks,
            "observed": obs.to_dict(),
            "null": nul.to_dict(),
        }
    artifacts.write_json(args.out, payload)
    return 0


def cmd_detect_change(args) -> int:
    series = artifacts.read_json(args.series)
    null = artifacts.read_json(args.null)
    change, durations = {}, {}
    config = RunConfig(corpus=[], out_dir=".", H=args.H, lambda_min=args.lambda_min)
    for p in POLARITIES:
        if p not in null or "offsets" not in series.get(p, {}):
            continue
        offsets, means, smoothed = _load_series_arrays(series[p])
        window = series[p]["window_minutes"]
        chart = means if args.raw else smoothed
        params = cusum_params(null[p]["T"], null[p]["K"], config)
        reports = [
            cusum(chart, offsets, params, detect_direction(p), window),
            ci_divergence(SeriesBands.from_dict(null[p]["observed"]), SeriesBands.from_dict(null[p]["null"])),
            median_excursion(smoothed, offsets, p, window),
        ]
        low, high = baseline_ci(smoothed, offsets)
        change[p] = {
            "params": {"T": params.T, "K": params.K, "H": params.H, "lambda_min": params.lambda_min},
            "cusum_series": "raw" if args.raw else "smoothed",
            "baseline_ci": [low, high],
            **{r.method: r.to_dict() for r in reports},
        }
        durations[p] = estimate_duration(reports, detect_direction(p)).to_dict()
    artifacts.write_json(args.out, change)
    if args.durations:
        artifacts.write_json(args.durations, durations)
    return 0


def _cusum_span(change: dict, polarity: str) -> tuple[int, int] | None:
    return ChangeReport.from_dict(change[polarity]["cusum"]).covering_t0()


def cmd_fit(args) -> int:
    series = artifacts.read_json(args.series)
    change = artifacts.read_json(args.spans)
    payload = {}
    for p in POLARITIES:
        if p not in change:
            continue
        span = _cusum_span(change, p)
        if span is None:
            payload[p] = {"skipped": "no CUSUM interval covers t0"}
            continue
        offsets, means, _ = _load_series_arrays(series[p])
        s = WindowSeries(p, series[p]["window_minutes"], offsets, np.zeros(len(offsets)), means,
                         np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64))  # fmt: skip
        trim = args.trim if args.trim is not None else (series[p]["smooth_span"] - 1) // 2
        payload[p] = fit_segments(s, span, trim)
    artifacts.write_json(args.out, payload)
    return 0


def cmd_peaks(args) -> int:
    cohorts = artifacts.read_cohorts(args.cohorts)
    change = artifacts.read_json(args.spans)
    payload = {}
    for p in POLARITIES:
        if p not in change:
            continue
        span = _cusum_span(change, p)
        if span is None:
            payload[p] = {"skipped": "no CUSUM interval covers t0"}
            continue
        peaks, omitted = peak_values(cohorts[p], span)
        values = [pk.peak_z for pk in peaks]
        entry = {"span": list(span), "omitted": omitted, "count": len(values)}
        entry["peaks"] = [{"subject_id": pk.subject_id, "peak_z": pk.peak_z} for pk in peaks]
        if values:
            entry["median"] = float(np.median(values))
            entry["ci95"] = [nearest_rank(values, 2.5), nearest_rank(values, 97.5)]
            entry["contrary_fraction"] = contrary_fraction(values, p)
        payload[p] = entry
    artifacts.write_json(args.out, payload)
    return 0


def _peak_values_from(path: str) -> dict[str, list[float]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        return {"values": data}
    out = {}
    for p in POLARITIES:
        entry = data.get(p)
        if isinstance(entry, dict) and "peaks" in entry:
            out[p] = [item["peak_z"] for item in entry["peaks"]]
        elif isinstance(entry, list):
            out[p] = entry
    return out


def cmd_gmm(args) -> int:
    payload = {}
    for i, (name, values) in enumerate(sorted(_peak_values_from(args.peaks).items())):
        selection = select_k(values, args.kmax, args.seed + i, args.restarts)
        payload[name] = selection.to_dict()
        if name in POLARITIES:
            payload[name]["contrary_fraction"] = contrary_fraction(values, name)
    artifacts.write_json(args.out, payload)
    return 0


def cmd_rdd(args) -> int:
    male = artifacts.read_json(args.male)
    female = artifacts.read_json(args.female)
    payload = {}
    for p in POLARITIES:
        m, f = male.get(p, {}), female.get(p, {})
        if "offsets" not in m or "offsets" not in f:
            continue
        if m["offsets"] != f["offsets"]:
            raise ValueError(f"{p}: male and female series are on different grids")
        mv = np.array([np.nan if v is None else v for v in m["means"]], dtype=float)
        fv = np.array([np.nan if v is None else v for v in f["means"]], dtype=float)
        diff = DiffSeries(np.asarray(m["offsets"]), mv - fv)
        payload[p] = {"difference": diff.to_dict(), "rdd": rdd_fit(diff).to_dict()}
    artifacts.write_json(args.out, payload)
    return 0


def cmd_synth(args) -> int:
    spec = load_spec(args.spec)
    timelines, report = generate_cohort(spec, args.subjects, args.seed, subject_prefix=args.subject_prefix)
    write_corpus(timelines, args.out)
    logger.info("wrote %d messages for %d subjects", report.messages, report.subjects)
    if args.report:
        payload = report.to_dict()
        payload["spec"] = spec.to_dict()
        artifacts.write_json(args.report, payload)
    return 0


def cmd_run(args) -> int:
    config = RunConfig.from_toml(args.config)
    if args.out_dir:
        config.out_dir = Path(args.out_dir)
    stages = [s.strip() for s in args.stages.split(",")] if args.stages else None
    try:
        bundle = run_pipeline(config, stages)
    except StageError as exc:
        logger.error("%s", exc)
        return 1
    logger.info("completed stages: %s", ", ".join(bundle.completed))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affectflow", description="Valence dynamics around affect-labeling statements.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and normalize JSONL message files")
    p.add_argument("--input", required=True, nargs="+", help="input file(s) or glob(s)")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("detect", help="find affect labels and build filtered cohorts")
    p.add_argument("--corpus", required=True, nargs="+")
    p.add_argument("--config", help="TOML with [patterns] and [filters]")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="score cohort messages")
    p.add_argument("--corpus", required=True, help="cohort file from 'detect'")
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("epoch", help="window and smooth scored cohorts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--smooth", type=int, default=10)
    p.add_argument("--gender", choices=("male", "female"))
    p.add_argument("--keep-values", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_epoch)

    p = sub.add_parser("null", help="null reference and percentile bands")
    p.add_argument("--cohorts", required=True)
    p.add_argument("--series", required=True)
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--ci-window", type=int, default=10)
    p.add_argument("--gender", choices=("male", "female"))
    p.add_argument("--exclude-window", action="store_true", help="leave the +-6h window out of the null pool")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_null)

    p = sub.add_parser("detect-change", help="CUSUM, band divergence and median excursion")
    p.add_argument("--series", required=True)
    p.add_argument("--null", required=True)
    p.add_argument("--H", type=float, default=0.01)
    p.add_argument("--lambda", dest="lambda_min", type=int, default=40)
    p.add_argument("--raw", action="store_true", help="run CUSUM on the unsmoothed series")
    p.add_argument("--durations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect_change)

    p = sub.add_parser("fit", help="fit curve families over the CUSUM span")
    p.add_argument("--series", required=True)
    p.add_argument("--spans", required=True)
    p.add_argument("--trim", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("peaks", help="per-subject peak z-scores inside the CUSUM span")
    p.add_argument("--cohorts", required=True)
    p.add_argument("--spans", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_peaks)

    p = sub.add_parser("gmm", help="mixture models of peak z-scores")
    p.add_argument("--peaks", required=True)
    p.add_argument("--kmax", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gmm)

    p = sub.add_parser("rdd", help="regression discontinuity on male-minus-female series")
    p.add_argument("--male", required=True)
    p.add_argument("--female", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rdd)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--subjects", type=int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--subject-prefix", default="s", help="prefix for generated subject ids")
    p.add_argument("--report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="run the whole pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help=f"comma-separated subset of: {', '.join(STAGES)}")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
