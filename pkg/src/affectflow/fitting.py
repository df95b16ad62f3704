"""Curve families for valence excursions, ranked by sum of squared errors.

Nonlinear fits use damped least squares (``scipy.optimize.least_squares``
with the Levenberg-Marquardt method) from 16 deterministic starting points.
Each start fixes the nonlinear parameters from a data-driven guess and solves
the linear ones (amplitudes, offset) exactly, so every start is already a
sensible curve. The quadratic is solved in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

logger = logging.getLogger(__name__)

FAMILIES = ("exponential", "lorentzian", "gaussian", "quadratic")
N_STARTS = 16
MAX_ITERATIONS = 500
SCALE_FACTORS = (1 / 16, 1 / 8, 1 / 4, 1 / 2, 1, 2, 4, 8)
ILL_CONDITIONED = 1e8


class FitError(RuntimeError):
    def __init__(self, message: str, best: "FitResult | None" = None):
        super().__init__(message)
        self.best = best


@dataclass
class FitResult:
    family: str
    params: dict[str, float]
    segment: tuple[int, int]
    sse: float
    n_points: int
    ill_conditioned: bool = False

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not all(math.isfinite(v) for v in self.params.values()):
            raise ValueError("non-finite parameter")

    def __call__(self, t) -> np.ndarray:
        return MODELS[self.family](np.asarray(t, dtype=float), **self.params)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": {k: float(v) for k, v in self.params.items()},
            "segment": [int(self.segment[0]), int(self.segment[1])],
            "sse": float(self.sse),
            "n_points": self.n_points,
            "ill_conditioned": self.ill_conditioned,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        return cls(
            data["family"],
            dict(data["params"]),
            tuple(data["segment"]),
            data["sse"],
            data["n_points"],
            data.get("ill_conditioned", False),
        )


def exponential(t, A, lam, b):
    return A * np.exp(lam * t) + b


def lorentzian(t, A, sigma, mu):
    return (A / math.pi) * (sigma / ((t - mu) ** 2 + sigma**2))


def gaussian(t, A, sigma, mu):
    return A / (sigma * math.sqrt(2 * math.pi)) * np.exp(-((t - mu) ** 2) / (2 * sigma**2))


def quadratic(t, a, b, c):
    return a * t**2 + b * t + c


MODELS: dict[str, Callable] = {
    "exponential": exponential,
    "lorentzian": lorentzian,
    "gaussian": gaussian,
    "quadratic": quadratic,
}
PARAM_NAMES = {
    "exponential": ("A", "lam", "b"),
    "lorentzian": ("A", "sigma", "mu"),
    "gaussian": ("A", "sigma", "mu"),
    "quadratic": ("a", "b", "c"),
}


def _prepare(t, y, minimum: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise ValueError("t and y differ in shape")
    keep = ~np.isnan(y)
    t, y = t[keep], y[keep]
    if len(t) < minimum:
        raise ValueError(f"need at least {minimum} defined points, got {len(t)}")
    return t, y


def _segment(t: np.ndarray) -> tuple[int, int]:
    return int(round(t.min())), int(round(t.max()))


def _multistart(family: str, t: np.ndarray, y: np.ndarray, starts: list[np.ndarray]) -> FitResult:
    model = MODELS[family]

    def residual(p):
        return model(t, *p) - y

    best_x, best_cost, best_jac = None, math.inf, None
    failures = 0
    for x0 in starts:
        if not np.all(np.isfinite(x0)):
            continue
        start_cost = float(np.sum(residual(x0) ** 2))
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            try:
                res = least_squares(
                    residual, x0, method="lm", ftol=1e-10, xtol=1e-12, gtol=1e-12, max_nfev=MAX_ITERATIONS * (len(x0) + 1)
                )
            except (ValueError, FloatingPointError):
                failures += 1
                continue
        cost = float(np.sum(res.fun**2)) if np.all(np.isfinite(res.fun)) else math.inf
        x, jac = res.x, res.jac
        if not cost < start_cost:
            # never hand back something worse than where we started
            x, cost, jac = x0, start_cost, None
        if not res.success:
            failures += 1
        if cost < best_cost and np.all(np.isfinite(x)):
            best_x, best_cost, best_jac = x, cost, jac
    if best_x is None:
        raise FitError(f"{family} fit failed from every start")
    ill = False
    if best_jac is not None:
        sv = np.linalg.svd(best_jac, compute_uv=False)
        ill = bool(sv[-1] == 0 or sv[0] / sv[-1] > ILL_CONDITIONED)
    if failures == len(starts):
        logger.warning("%s fit: no start converged cleanly; returning best point", family)
    params = dict(zip(PARAM_NAMES[family], (float(v) for v in best_x)))
    return FitResult(family, params, _segment(t), best_cost, len(t), ill)


def _linear_solve(columns: list[np.ndarray], y: np.ndarray) -> np.ndarray:
    X = np.column_stack(columns)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


def _loglinear_rate(t: np.ndarray, y: np.ndarray) -> float:
    """Rate guess from regressing log|y - baseline| on t, baseline taken at the flat end."""
    # the flat end is the one farther from the segment's largest deviation
    edge = max(3, len(y) // 5)
    head, tail = np.median(y[:edge]), np.median(y[-edge:])
    dev_head = np.abs(y[:edge] - np.median(y)).mean()
    dev_tail = np.abs(y[-edge:] - np.median(y)).mean()
    base = head if dev_head < dev_tail else tail
    r = np.abs(y - base)
    ok = r > 1e-12
    if ok.sum() < 2 or np.ptp(t[ok]) == 0:
        return 0.05
    slope = np.polyfit(t[ok], np.log(r[ok]), 1)[0]
    return abs(slope) if math.isfinite(slope) and slope != 0 else 0.05


def fit_exponential(t: Sequence[float], y: Sequence[float]) -> FitResult:
    """``A * exp(lam * t) + b`` on one monotone segment."""
    t, y = _prepare(t, y, 4)
    rate = _loglinear_rate(t, y)
    starts = []
    for sign in (1.0, -1.0):
        for factor in SCALE_FACTORS:
            lam = sign * rate * factor
            with np.errstate(over="ignore"):
                col = np.exp(lam * t)
            if not np.all(np.isfinite(col)):
                continue
            A, b = _linear_solve([col, np.ones_like(t)], y)
            starts.append(np.array([A, lam, b]))
    return _multistart("exponential", t, y, starts)


def _bump_starts(kernel: Callable, t: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    width = max(np.ptp(t), 1.0)
    centers = (float(t[np.argmax(np.abs(y))]), float(t.mean()))
    starts = []
    for mu in centers:
        for factor in SCALE_FACTORS:
            sigma = width * factor / 2
            (A,) = _linear_solve([kernel(t, 1.0, sigma, mu)], y)
            starts.append(np.array([A, sigma, mu]))
    return starts


def fit_lorentzian(t: Sequence[float], y: Sequence[float]) -> FitResult:
    """``(A / pi) * sigma / ((t - mu)**2 + sigma**2)``."""
    t, y = _prepare(t, y, 4)
    result = _multistart("lorentzian", t, y, _bump_starts(lorentzian, t, y))
    result.params["sigma"] = abs(result.params["sigma"])
    return result


def fit_gaussian(t: Sequence[float], y: Sequence[float]) -> FitResult:
    """``A / (sigma * sqrt(2 pi)) * exp(-(t - mu)**2 / (2 sigma**2))``."""
    t, y = _prepare(t, y, 4)
    result = _multistart("gaussian", t, y, _bump_starts(gaussian, t, y))
    result.params["sigma"] = abs(result.params["sigma"])
    return result


def fit_quadratic(t: Sequence[float], y: Sequence[float]) -> FitResult:
    """``a t**2 + b t + c`` from the normal equations."""
    t, y = _prepare(t, y, 3)
    X = np.column_stack([t**2, t, np.ones_like(t)])
    coef = np.linalg.solve(X.T @ X, X.T @ y)
    sse = float(np.sum((X @ coef - y) ** 2))
    ill = bool(np.linalg.cond(X.T @ X) > 1e12)
    return FitResult("quadratic", dict(zip(("a", "b", "c"), map(float, coef))), _segment(t), sse, len(t), ill)


@dataclass
class RankedModel:
    label: str
    sse: float
    fits: list[FitResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"model": self.label, "sse": float(self.sse), "fits": [f.to_dict() for f in self.fits]}


def rank_models(fits: Sequence[FitResult]) -> list[RankedModel]:
    """Order model families by SSE; exponential segments are pooled into one entry."""
    exps = [f for f in fits if f.family == "exponential"]
    ranked = [RankedModel(f.family, f.sse, [f]) for f in fits if f.family != "exponential"]
    if exps:
        label = "exponential" if len(exps) == 1 else f"{len(exps)} exponentials"
        ranked.append(RankedModel(label, sum(f.sse for f in exps), exps))
    return sorted(ranked, key=lambda r: (r.sse, r.label))


@dataclass(frozen=True)
class HalfLife:
    minutes: float
    peak_value: float
    end_value: float
    closed_form: float

    def to_dict(self) -> dict:
        return {
            "minutes": self.minutes,
            "peak_value": self.peak_value,
            "end_value": self.end_value,
            "closed_form": self.closed_form,
        }


def half_life_closed_form(lam: float, segment_end: float) -> float:
    r = abs(lam)
    return math.log(2.0 / (1.0 + math.exp(-r * segment_end))) / r


def half_life(decay: FitResult, segment_end: float, tol: float = 1e-12) -> HalfLife:
    """Time for the decay curve to cover half the way from f(0) to f(segment_end).

    The root is bracketed on ``[0, 10 * segment_end]`` and found by bisection;
    the closed form is returned alongside as a cross-check.
    """
    if decay.family != "exponential":
        raise ValueError("half-life needs an exponential decay fit")
    A, lam, b = decay.params["A"], decay.params["lam"], decay.params["b"]
    if A == 0 or lam == 0:
        raise ValueError("flat decay curve; half-life undefined")
    if lam > 0:
        raise ValueError("decay fit has a growing exponential (lam > 0)")
    if segment_end <= 0:
        raise ValueError("segment_end must be positive")
    p = exponential(0.0, A, lam, b)
    e = exponential(float(segment_end), A, lam, b)
    target = (p + e) / 2

    def g(t):
        return exponential(t, A, lam, b) - target

    lo, hi = 0.0, 10.0 * segment_end
    if g(lo) * g(hi) > 0:
        raise ValueError("half-life not bracketed")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if (g(mid) > 0) == (g(lo) > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    root = 0.5 * (lo + hi)
    return HalfLife(root, float(p), float(e), half_life_closed_form(lam, segment_end))
