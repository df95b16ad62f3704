"""End-to-end orchestration: corpus in, JSON/CSV/SVG results out.

Stages run in a fixed order. A partial run (``stages=...``) executes the
requested stages plus the earlier ones they depend on, and only the requested
stages' artifacts are written. A manifest records which stages completed so
that a failed run still leaves usable partial output.
"""

from __future__ import annotations

import csv
import glob
import io
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import artifacts
from .affect import NEGATIVE, POSITIVE, Cohort, build_cohorts, load_config, scan_corpus, score_cohort
from .changepoint import (
    ChangeReport,
    CusumParams,
    baseline_ci,
    cusum,
    estimate_duration,
    median_excursion,
)
from .epoch import WindowSeries, peak_values, rolling_mean, window_series
from .fitting import FitError, fit_exponential, fit_gaussian, fit_lorentzian, fit_quadratic, half_life, rank_models
from .ingest import read_corpus
from .mixture import MixtureError, contrary_fraction, select_k
from .nullmodel import build_null, build_pool, ci_divergence, null_bands, null_reference, observed_bands
from .rdd import difference_series, gender_change_spans, rdd_fit
from .sentiment import RuleScorer, load_lexicon
from .stats import nearest_rank

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

STAGES = ("ingest", "detect", "score", "epoch", "null", "changepoint", "fit", "mixture", "rdd", "report")
POLARITIES = (POSITIVE, NEGATIVE)
GENDERS = ("female", "male")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    corpus: list[str]
    out_dir: Path
    lexicon: str | None = None
    patterns: str | None = None
    window_minutes: int = 1
    ci_window_minutes: int = 10
    smooth_span: int = 10
    cusum_series: str = "smoothed"
    H: float = 0.01
    lambda_min: int = 40
    replicates: int = 10_000
    seed: int = 42
    exclude_window_from_pool: bool = False
    fit_trim: int | None = None
    kmax: int = 5
    gmm_restarts: int = 10
    gender: bool = True
    plots: bool = True
    keep_intermediate: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.corpus, (str, Path)):
            self.corpus = [str(self.corpus)]
        self.out_dir = Path(self.out_dir)
        if self.cusum_series not in ("smoothed", "raw"):
            raise ValueError("cusum_series must be 'smoothed' or 'raw'")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")

    @property
    def trim(self) -> int:
        """Minutes cut from the outer ends of the CUSUM span before curve fitting.

        A centered rolling mean widens a detected span by about half its
        width on each side, so the default undoes that widening.
        """
        if self.fit_trim is not None:
            return self.fit_trim
        return (self.smooth_span - 1) // 2 if self.cusum_series == "smoothed" else 0

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
        base = path.parent
        paths = dict(data.get("paths", {}))
        analysis = dict(data.get("analysis", {}))
        known = {f.name for f in fields(cls)}
        unknown = (set(paths) | set(analysis)) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")

        def resolve(p):
            return str(p if Path(p).is_absolute() else base / p)

        corpus = paths.pop("corpus", None)
        if corpus is None:
            raise ValueError(f"{path}: [paths] corpus is required")
        corpus = [resolve(c) for c in (corpus if isinstance(corpus, list) else [corpus])]
        for key in ("lexicon", "patterns"):
            if paths.get(key):
                paths[key] = resolve(paths[key])
        out_dir = resolve(paths.pop("out_dir", "results"))
        return cls(corpus=corpus, out_dir=Path(out_dir), **paths, **analysis)

    def validate(self) -> None:
        for pattern in self.corpus:
            if not glob.glob(pattern):
                raise FileNotFoundError(f"corpus input {pattern} matches nothing")
        for p in (self.lexicon, self.patterns):
            if p and not Path(p).exists():
                raise FileNotFoundError(p)


@dataclass
class ResultBundle:
    artifacts: dict[str, dict] = field(default_factory=dict)
    completed: list[str] = field(default_factory=list)
    failed: str | None = None
    error: str | None = None

    def __getitem__(self, name: str) -> dict:
        return self.artifacts[name]


def cusum_params(T: float, K: float, config: RunConfig) -> CusumParams:
    return CusumParams(T=T, K=K, H=config.H, lambda_min=config.lambda_min)


def detect_direction(polarity: str) -> str:
    return "upper" if polarity == POSITIVE else "lower"


def analyse_series(cohort: Cohort, config: RunConfig, seed: int) -> dict:
    """Series, null reference, bands and the three change criteria for one cohort."""
    s1 = window_series(cohort, config.window_minutes)
    smoothed = rolling_mean(s1.means, config.smooth_span)
    pool = build_pool(cohort, exclude_window=config.exclude_window_from_pool)
    null = build_null(cohort, s1, seed, pool)
    T, K = null_reference(null, config.smooth_span if config.cusum_series == "smoothed" else None)
    chart_input = smoothed if config.cusum_series == "smoothed" else s1.means
    params = cusum_params(T, K, config)
    cusum_report = cusum(chart_input, s1.offsets, params, detect_direction(cohort.polarity), config.window_minutes)
    sci = window_series(cohort, config.ci_window_minutes)
    obs = observed_bands(sci, config.replicates, seed)
    nul = null_bands(sci, pool, config.replicates, seed)
    ci_report = ci_divergence(obs, nul)
    med = median_excursion(smoothed, s1.offsets, cohort.polarity, config.window_minutes)
    return {
        "series": s1,
        "smoothed": smoothed,
        "series_ci": sci,
        "T": T,
        "K": K,
        "null_means": null.means,
        "fallbacks": null.fallbacks + nul.fallbacks,
        "observed_bands": obs,
        "null_bands": nul,
        "cusum": cusum_report,
        "ci_divergence": ci_report,
        "median_excursion": med,
        "params": params,
    }


def fit_segments(series: WindowSeries, span: tuple[int, int], trim: int) -> dict:
    """Two exponentials around t0 plus the three single-curve families over the span."""
    start, end = span
    t = series.offsets.astype(float)
    y = series.means
    up = (t >= start + trim) & (t <= -1)
    down = (t >= 0) & (t <= end - trim)
    whole = (t >= start + trim) & (t <= end - trim)
    fits, errors = [], {}
    for name, func, mask in (
        ("exponential_up", fit_exponential, up),
        ("exponential_down", fit_exponential, down),
        ("lorentzian", fit_lorentzian, whole),
        ("gaussian", fit_gaussian, whole),
        ("quadratic", fit_quadratic, whole),
    ):
        try:
            fits.append((name, func(t[mask], y[mask])))
        except (FitError, ValueError) as exc:
            errors[name] = str(exc)
    by_name = dict(fits)
    out = {
        "span": list(span),
        "trim": trim,
        "fits": {name: fit.to_dict() for name, fit in fits},
        "ranking": [r.to_dict() for r in rank_models([f for _, f in fits])],
        "errors": errors,
    }
    decay = by_name.get("exponential_down")
    if decay is not None:
        try:
            out["half_life"] = half_life(decay, end).to_dict()
        except ValueError as exc:
            errors["half_life"] = str(exc)
    return out


class Run:
    def __init__(self, config: RunConfig, stages: Sequence[str] | None = None):
        self.config = config
        requested = list(stages) if stages else list(STAGES)
        unknown = set(requested) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stages {sorted(unknown)}")
        last = max(STAGES.index(s) for s in requested)
        self.requested = set(requested)
        self.to_run = [s for s in STAGES[: last + 1] if s != "report" or "report" in self.requested]
        self.bundle = ResultBundle()
        self.timelines = None
        self.cohorts: dict[str, Cohort] = {}
        self.analysis: dict[str, dict] = {}
        self.spans: dict[str, tuple[int, int] | None] = {}

    def emit(self, stage: str, name: str, payload: dict) -> None:
        self.bundle.artifacts[name] = payload
        if stage in self.requested:
            artifacts.write_json(self.config.out_dir / f"{name}.json", payload)

    def active(self) -> list[str]:
        return [p for p in POLARITIES if len(self.cohorts.get(p, ())) > 0]

    # stages -------------------------------------------------------------

    def ingest(self) -> None:
        self.timelines, report = read_corpus(self.config.corpus)
        self.emit("ingest", "ingest", report.to_dict())

    def detect(self) -> None:
        pattern_cfg, filter_cfg = load_config(self.config.patterns)
        labels = scan_corpus(self.timelines, pattern_cfg)
        pos, neg, report = build_cohorts(self.timelines, labels, pattern_cfg, filter_cfg)
        self.timelines = None
        self.cohorts = {POSITIVE: pos, NEGATIVE: neg}
        payload = report.to_dict()
        payload["labels"] = len(labels)
        self.emit("detect", "filters", payload)
        if not self.active():
            raise ValueError("no anchored timelines survived filtering")

    def score(self) -> None:
        lexicon = load_lexicon(self.config.lexicon) if self.config.lexicon else None
        scorer = RuleScorer(lexicon)
        self.cohorts = {p: score_cohort(c, scorer) for p, c in self.cohorts.items()}
        if self.config.keep_intermediate and "score" in self.requested:
            self.config.out_dir.mkdir(parents=True, exist_ok=True)
            artifacts.write_cohorts(self.config.out_dir / "scored.jsonl", self.cohorts.values())

    def epoch(self) -> None:
        series, volumes = {}, {}
        for p in POLARITIES:
            cohort = self.cohorts.get(p)
            if not cohort:
                series[p] = {"timelines": 0}
                continue
            s1 = window_series(cohort, self.config.window_minutes)
            smoothed = rolling_mean(s1.means, self.config.smooth_span)
            entry = s1.to_dict()
            entry["smoothed"] = smoothed
            entry["smooth_span"] = self.config.smooth_span
            entry["timelines"] = len(cohort)
            series[p] = entry
            volumes[p] = {"offsets": s1.offsets, "counts": s1.counts, "window_minutes": s1.window_minutes}
        self.emit("epoch", "series", series)
        self.emit("epoch", "volumes", volumes)

    def null(self) -> None:
        payload = {}
        for i, p in enumerate(POLARITIES):
            if p not in self.active():
                continue
            result = analyse_series(self.cohorts[p], self.config, self.config.seed + i)
            self.analysis[p] = result
            payload[p] = {
                "T": result["T"],
                "K": result["K"],
                "null_means": result["null_means"],
                "fallbacks": result["fallbacks"],
                "observed": result["observed_bands"].to_dict(),
                "null": result["null_bands"].to_dict(),
            }
        payload["replicates"] = self.config.replicates
        payload["seed"] = self.config.seed
        self.emit("null", "null", payload)

    def changepoint(self) -> None:
        change, durations = {}, {}
        for p in self.active():
            a = self.analysis[p]
            smoothed, offsets = a["smoothed"], a["series"].offsets
            low, high = baseline_ci(smoothed, offsets)
            reports: list[ChangeReport] = [a["cusum"], a["ci_divergence"], a["median_excursion"]]
            est = estimate_duration(reports, detect_direction(p))
            self.spans[p] = est.spans.get("cusum")
            change[p] = {
                "params": {"T": a["T"], "K": a["K"], "H": self.config.H, "lambda_min": self.config.lambda_min},
                "cusum_series": self.config.cusum_series,
                "baseline_ci": [low, high],
                **{r.method: r.to_dict() for r in reports},
            }
            durations[p] = est.to_dict()
        self.emit("changepoint", "change", change)
        self.emit("changepoint", "durations", durations)

    def fit(self) -> None:
        payload = {}
        for p in self.active():
            span = self.spans.get(p)
            if span is None:
                payload[p] = {"skipped": "no CUSUM interval covers t0"}
                continue
            payload[p] = fit_segments(self.analysis[p]["series"], span, self.config.trim)
        self.emit("fit", "fits", payload)

    def mixture(self) -> None:
        peaks_out, gmm_out = {}, {}
        for i, p in enumerate(POLARITIES):
            if p not in self.active():
                continue
            span = self.spans.get(p)
            if span is None:
                peaks_out[p] = gmm_out[p] = {"skipped": "no CUSUM interval covers t0"}
                continue
            peaks, omitted = peak_values(self.cohorts[p], span)
            values = np.array([pk.peak_z for pk in peaks])
            entry = {"span": list(span), "omitted": omitted, "count": len(values)}
            if len(values):
                entry["median"] = float(np.median(values))
                entry["ci95"] = [nearest_rank(values, 2.5), nearest_rank(values, 97.5)]
                entry["contrary_fraction"] = contrary_fraction(values, p)
            entry["peaks"] = [{"subject_id": pk.subject_id, "peak_z": pk.peak_z} for pk in peaks]
            peaks_out[p] = entry
            try:
                selection = select_k(values, self.config.kmax, self.config.seed + i, self.config.gmm_restarts)
                gmm_out[p] = selection.to_dict()
                gmm_out[p]["contrary_fraction"] = entry.get("contrary_fraction")
            except (MixtureError, ValueError) as exc:
                gmm_out[p] = {"skipped": str(exc)}
        self.emit("mixture", "peaks", peaks_out)
        self.emit("mixture", "gmm", gmm_out)

    def rdd(self) -> None:
        payload: dict = {}
        if not self.config.gender:
            self.emit("rdd", "rdd", {"skipped": "gender analysis disabled"})
            return
        cells = {}
        for i, p in enumerate(POLARITIES):
            if p not in self.active():
                continue
            by_gender = {g: self.cohorts[p].restrict_gender(g) for g in GENDERS}
            if any(len(c) == 0 for c in by_gender.values()):
                payload[p] = {"skipped": "a gender subset is empty"}
                continue
            entry = {}
            for j, g in enumerate(GENDERS):
                result = analyse_series(by_gender[g], self.config, self.config.seed + 10 * (i + 1) + j)
                cells[(g, p)] = {"cusum": result["cusum"], "ci_divergence": result["ci_divergence"]}
                entry[g] = {"timelines": len(by_gender[g]), "T": result["T"], "K": result["K"]}
            male = window_series(by_gender["male"], self.config.ci_window_minutes)
            female = window_series(by_gender["female"], self.config.ci_window_minutes)
            diff = difference_series(male, female)
            entry["difference"] = diff.to_dict()
            try:
                entry["rdd"] = rdd_fit(diff).to_dict()
            except ValueError as exc:
                entry["rdd"] = {"skipped": str(exc)}
            payload[p] = entry
        payload["gender_spans"] = gender_change_spans(cells)
        self.emit("rdd", "rdd", payload)

    def report(self) -> None:
        out = self.config.out_dir
        out.mkdir(parents=True, exist_ok=True)
        for which in ("fits", "durations", "gender_spans"):
            try:
                text = emit_table(self.bundle.artifacts, which)
            except (KeyError, ValueError):
                continue
            (out / f"{which}.csv").write_text(text, encoding="utf-8")
        if self.config.plots:
            from . import plots

            plots.render_all(self.bundle.artifacts, out)

    # driver -------------------------------------------------------------

    def execute(self) -> ResultBundle:
        manifest_path = self.config.out_dir / "manifest.json"
        try:
            self.config.validate()
            for stage in self.to_run:
                started = time.perf_counter()
                try:
                    getattr(self, stage)()
                except Exception as exc:  # noqa: BLE001 - recorded with stage context
                    self.bundle.failed = stage
                    self.bundle.error = f"{type(exc).__name__}: {exc}"
                    raise StageError(stage, exc) from exc
                self.bundle.completed.append(stage)
                logger.info("stage %s done in %.1fs", stage, time.perf_counter() - started)
        finally:
            if self.bundle.completed or self.bundle.failed:
                artifacts.write_json(
                    manifest_path,
                    {
                        "requested": [s for s in STAGES if s in self.requested],
                        "completed": self.bundle.completed,
                        "failed": self.bundle.failed,
                        "error": self.bundle.error,
                        "complete": self.bundle.failed is None
                        and all(s in self.bundle.completed for s in self.requested),
                        "artifacts": sorted(f"{n}.json" for n in self.bundle.artifacts),
                    },
                )
        return self.bundle


def run_pipeline(config: RunConfig, stages: Sequence[str] | None = None) -> ResultBundle:
    return Run(config, stages).execute()


def _span_text(span) -> str:
    if span is None:
        return ""
    return f"[{span[0]:+d},{span[1]:+d}]"


def emit_table(bundle: dict, which: str) -> str:
    """CSV rendering of the fits, durations or gender-span table."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if which == "fits":
        fits = bundle["fits"]
        writer.writerow(["polarity", "rank", "model", "parameters", "sse"])
        rows = 0
        for p in POLARITIES:
            entry = fits.get(p)
            if not entry or "ranking" not in entry:
                continue
            for rank, model in enumerate(entry["ranking"], start=1):
                params = "; ".join(
                    f"{f['segment'][0]:+d}..{f['segment'][1]:+d}: "
                    + ", ".join(f"{k}={v:.6g}" for k, v in sorted(f["params"].items()))
                    for f in model["fits"]
                )
                writer.writerow([p, rank, model["model"], params, f"{model['sse']:.6g}"])
                rows += 1
        if not rows:
            raise ValueError("no fits in bundle")
    elif which == "durations":
        durations = bundle["durations"]
        if not durations:
            raise ValueError("no durations in bundle")
        writer.writerow(["method", "positive_length", "positive_span", "negative_length", "negative_span"])
        methods = ("cusum", "ci_divergence", "median_excursion")
        for method in methods + ("average",):
            row = [method]
            for p in POLARITIES:
                d = durations.get(p)
                if d is None:
                    row += ["", ""]
                    continue
                if method == "average":
                    span, length = d["average"]["span"], d["average"]["duration"]
                else:
                    item = next(m for m in d["methods"] if m["method"] == method)
                    span, length = item["span"], item["duration"]
                row += ["" if length is None else length, _span_text(span)]
            writer.writerow(row)
    elif which == "gender_spans":
        rows = bundle["rdd"].get("gender_spans")
        if not rows:
            raise ValueError("no gender spans in bundle")
        writer.writerow(["group", "ci_length", "ci_span", "cusum_length", "cusum_span"])
        for row in rows:
            out = [row["group"]]
            for method in ("ci_divergence", "cusum"):
                cell = row[method]
                out += ["", ""] if cell is None else [cell["duration"], _span_text(cell["span"])]
            writer.writerow(out)
    else:
        raise ValueError(f"unknown table {which!r}")
    return buf.getvalue()
