"""One-dimensional Gaussian mixtures fitted by expectation-maximization."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
DEFAULT_RESTARTS = 10
REL_TOL = 1e-8
MAX_ITER = 2000
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class MixtureError(RuntimeError):
    pass


@dataclass
class GmmResult:
    k: int
    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    log_likelihood: float
    n: int
    iterations: int
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def n_params(self) -> int:
        return 3 * self.k - 1

    @property
    def aic(self) -> float:
        return 2 * self.n_params - 2 * self.log_likelihood

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n) - 2 * self.log_likelihood

    @property
    def monotone(self) -> bool:
        h = self.history
        return all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(h, h[1:]))

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[:, None]
        comp = np.exp(-0.5 * ((x - self.means) / self.sigmas) ** 2) / (self.sigmas * math.sqrt(2 * math.pi))
        return comp @ self.weights

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "weights": [float(w) for w in self.weights],
            "components": [{"mu": float(m), "sigma": float(s)} for m, s in zip(self.means, self.sigmas)],
            "log_likelihood": float(self.log_likelihood),
            "aic": float(self.aic),
            "bic": float(self.bic),
            "n": self.n,
            "iterations": self.iterations,
        }


def _component_logpdf(x: np.ndarray, means: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    z = (x[:, None] - means) / sigmas
    return -0.5 * z * z - np.log(sigmas) - _LOG_SQRT_2PI


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.sort(np.array(centers))


def _initial(x: np.ndarray, k: int, rng: np.random.Generator):
    centers = _kmeanspp(x, k, rng)
    label = np.argmin(np.abs(x[:, None] - centers), axis=1)
    weights, means, sigmas = np.empty(k), np.empty(k), np.empty(k)
    spread = x.std()
    for j in range(k):
        members = x[label == j]
        weights[j] = max(len(members), 1) / len(x)
        means[j] = members.mean() if len(members) else centers[j]
        sigmas[j] = members.std() if len(members) > 1 and members.std() > 0 else spread
    return weights / weights.sum(), means, sigmas


def _e_step(x: np.ndarray, weights, means, sigmas) -> tuple[np.ndarray, float]:
    """Responsibilities and log-likelihood."""
    dens = np.subtract.outer(x, means)
    dens /= sigmas
    np.square(dens, out=dens)
    dens *= -0.5
    np.exp(dens, out=dens)
    dens *= weights / sigmas
    row = dens.sum(axis=1)
    if np.all(row > 0):
        loglik = float(np.log(row).sum()) - len(x) * _LOG_SQRT_2PI
        dens /= row[:, None]
        return dens, loglik
    # far outliers underflow every component; redo in log space
    joint = _component_logpdf(x, means, sigmas) + np.log(weights)
    lrow = logsumexp(joint, axis=1)
    return np.exp(joint - lrow[:, None]), float(lrow.sum())


def _em(x: np.ndarray, weights, means, sigmas, tol: float, max_iter: int):
    """Run EM; returns parameters, final log-likelihood, history, or None on collapse."""
    history = []
    prev = -math.inf
    iteration = 0
    x2 = x * x
    for iteration in range(1, max_iter + 1):
        resp, loglik = _e_step(x, weights, means, sigmas)
        history.append(loglik)
        if iteration > 1 and abs(loglik - prev) <= tol * abs(loglik):
            break
        prev = loglik
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            return None
        weights = nk / len(x)
        means = (x @ resp) / nk
        sigmas = np.sqrt(np.maximum((x2 @ resp) / nk - means**2, 0.0))
        if np.any(sigmas < SIGMA_FLOOR):
            return None
    else:
        logger.debug("EM stopped at max_iter=%d before converging", max_iter)
    return weights, means, sigmas, loglik, history, iteration


def fit_gmm(
    values: Sequence[float],
    k: int,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    tol: float = REL_TOL,
    max_iter: int = MAX_ITER,
) -> GmmResult:
    """Best of ``restarts`` k-means++-seeded EM runs by log-likelihood.

    A run whose component standard deviation falls under ``SIGMA_FLOOR`` is
    discarded as collapsed. Components are returned sorted by mean.
    """
    x = np.asarray(values, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    if x.ndim != 1 or len(x) <= 3 * k:
        raise ValueError(f"need more than {3 * k} values for k={k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    best = None
    collapsed = 0
    for r in range(restarts):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k, r))))
        out = _em(x, *_initial(x, k, rng), tol, max_iter)
        if out is None:
            collapsed += 1
            continue
        weights, means, sigmas, loglik, history, iterations = out
        if best is None or loglik > best.log_likelihood:
            order = np.argsort(means, kind="stable")
            best = GmmResult(k, weights[order], means[order], sigmas[order], loglik, len(x), iterations, history)
    if best is None:
        raise MixtureError(f"all {restarts} restarts collapsed for k={k}")
    if collapsed:
        logger.info("k=%d: %d of %d restarts collapsed", k, collapsed, restarts)
    return best


def marginal_choice(fits: Sequence[GmmResult], criterion: str) -> int:
    """k whose step from k-1 lowers the criterion most; 1 when no step lowers it."""
    scores = [getattr(f, criterion) for f in fits]
    drops = [scores[i - 1] - scores[i] for i in range(1, len(scores))]
    if not drops or max(drops) <= 0:
        return fits[0].k
    return fits[int(np.argmax(drops)) + 1].k


@dataclass
class KSelection:
    k: int
    k_aic: int
    k_bic: int
    fits: list[GmmResult]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "k_aic": self.k_aic,
            "k_bic": self.k_bic,
            "fits": [f.to_dict() for f in self.fits],
        }


def select_k(values: Sequence[float], k_max: int = 5, seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> KSelection:
    """Fit k = 1..k_max and pick k by the largest marginal AIC and BIC drop.

    When the two criteria disagree, the BIC choice is reported as ``k``.
    """
    fits = [fit_gmm(values, k, seed, restarts) for k in range(1, k_max + 1)]
    k_aic = marginal_choice(fits, "aic")
    k_bic = marginal_choice(fits, "bic")
    if k_aic != k_bic:
        logger.info("AIC prefers k=%d, BIC prefers k=%d; reporting BIC", k_aic, k_bic)
    return KSelection(k_bic, k_aic, k_bic, fits)


def contrary_fraction(peaks: Sequence[float], polarity: str) -> float:
    """Share of peaks whose sign opposes the cohort polarity; zeros are not contrary."""
    p = np.asarray(peaks, dtype=float)
    if p.size == 0:
        raise ValueError("no peaks")
    if polarity == "positive":
        return float(np.mean(p < 0))
    if polarity == "negative":
        return float(np.mean(p > 0))
    raise ValueError(f"unknown polarity {polarity!r}")
