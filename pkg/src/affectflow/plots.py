"""Static SVG views of the pipeline results.

Plots are derived from the JSON artifacts only and are never read back.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

COLORS = {"positive": "tab:orange", "negative": "tab:blue", "female": "tab:red", "male": "tab:green"}


def _arr(values) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def _save(fig, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "affectflow"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_series(series: dict, change: dict, path: Path) -> None:
    """Smoothed mean valence per polarity, baseline band and CUSUM intervals."""
    fig, axes = plt.subplots(len(series), 1, figsize=(8, 3 * len(series)), squeeze=False)
    for ax, (polarity, entry) in zip(axes[:, 0], series.items()):
        k = np.asarray(entry["offsets"])
        ax.plot(k, _arr(entry["means"]), color="0.7", lw=0.6, label="1-minute mean")
        ax.plot(k, _arr(entry["smoothed"]), color=COLORS.get(polarity, "k"), lw=1.4, label="rolling mean")
        info = change.get(polarity, {})
        if "baseline_ci" in info:
            ax.axhspan(*info["baseline_ci"], color="0.85", zorder=0, label="baseline 95% CI")
        for item in info.get("cusum", {}).get("intervals", []):
            ax.axvspan(item["start"], item["end"], color="0.5", alpha=0.25)
        ax.axvline(0, color="k", lw=0.5)
        ax.set_title(polarity)
        ax.set_xlabel("minutes from t0")
        ax.set_ylabel("valence")
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def plot_bands(null: dict, path: Path) -> None:
    """Observed versus null percentile bands."""
    polarities = [p for p in ("positive", "negative") if p in null]
    fig, axes = plt.subplots(len(polarities), 1, figsize=(8, 3 * len(polarities)), squeeze=False)
    for ax, polarity in zip(axes[:, 0], polarities):
        for kind, color in (("observed", COLORS.get(polarity, "k")), ("null", "0.4")):
            band = null[polarity][kind]
            k = np.asarray(band["offsets"])
            ax.fill_between(k, _arr(band["p5"]), _arr(band["p95"]), color=color, alpha=0.3, step="post", label=kind)
            ax.step(k, _arr(band["p50"]), color=color, where="post", lw=1)
        ax.axvline(0, color="k", lw=0.5)
        ax.set_title(polarity)
        ax.set_xlabel("minutes from t0")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_peaks(peaks: dict, gmm: dict, path: Path) -> None:
    """Histogram of per-subject peak z-scores with the selected mixture density."""
    polarities = [p for p in ("positive", "negative") if p in peaks and "peaks" in peaks[p]]
    if not polarities:
        return
    fig, axes = plt.subplots(1, len(polarities), figsize=(5 * len(polarities), 3.5), squeeze=False)
    for ax, polarity in zip(axes[0], polarities):
        values = np.array([item["peak_z"] for item in peaks[polarity]["peaks"]])
        if values.size == 0:
            continue
        ax.hist(values, bins=40, density=True, color=COLORS.get(polarity, "k"), alpha=0.5)
        sel = gmm.get(polarity, {})
        if "fits" in sel:
            chosen = sel["fits"][sel["k"] - 1]
            grid = np.linspace(values.min(), values.max(), 400)
            density = np.zeros_like(grid)
            for w, comp in zip(chosen["weights"], chosen["components"]):
                density += w * np.exp(-0.5 * ((grid - comp["mu"]) / comp["sigma"]) ** 2) / (
                    comp["sigma"] * np.sqrt(2 * np.pi)
                )
            ax.plot(grid, density, color="k", lw=1.2)
        ax.set_title(f"{polarity} peaks")
        ax.set_xlabel("peak z")
    fig.tight_layout()
    _save(fig, path)


def plot_rdd(rdd: dict, path: Path) -> None:
    """Male-minus-female difference with the two fitted lines."""
    polarities = [p for p in ("positive", "negative") if isinstance(rdd.get(p), dict) and "difference" in rdd[p]]
    if not polarities:
        return
    fig, axes = plt.subplots(len(polarities), 1, figsize=(8, 3 * len(polarities)), squeeze=False)
    for ax, polarity in zip(axes[:, 0], polarities):
        diff = rdd[polarity]["difference"]
        k = np.asarray(diff["offsets"], dtype=float)
        ax.plot(k, _arr(diff["values"]), "o", ms=2, color="0.4")
        fit = rdd[polarity].get("rdd", {})
        for side, mask in (("pre", k < 0), ("post", k >= 0)):
            if side in fit:
                line = fit[side]
                ax.plot(k[mask], line["intercept"] + line["slope"] * k[mask], color=COLORS.get(polarity, "k"))
        ax.axvline(0, color="k", lw=0.5)
        ax.set_title(f"{polarity}: male - female")
        ax.set_xlabel("minutes from t0")
    fig.tight_layout()
    _save(fig, path)


def render_all(bundle: dict, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    series = {p: e for p, e in bundle.get("series", {}).items() if "offsets" in e}
    if series:
        written.append(out_dir / "series.svg")
        plot_series(series, bundle.get("change", {}), written[-1])
    if bundle.get("null"):
        written.append(out_dir / "bands.svg")
        plot_bands(bundle["null"], written[-1])
    if bundle.get("peaks"):
        written.append(out_dir / "peaks.svg")
        plot_peaks(bundle["peaks"], bundle.get("gmm", {}), written[-1])
    if isinstance(bundle.get("rdd"), dict):
        written.append(out_dir / "rdd.svg")
        plot_rdd(bundle["rdd"], written[-1])
    return [p for p in written if p.exists()]
