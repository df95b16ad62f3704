from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from affectflow.mixture import MixtureError, contrary_fraction, fit_gmm, marginal_choice, select_k


def mixture_sample(n, weights, means, sds, seed):
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(weights), size=n, p=weights)
    return rng.normal(np.asarray(means)[comp], np.asarray(sds)[comp])


def test_k1_matches_sample_moments():
    x = np.random.default_rng(0).normal(0.3, 1.7, size=2000)
    fit = fit_gmm(x, 1, seed=0)
    assert fit.means[0] == pytest.approx(x.mean(), abs=1e-9)
    assert fit.sigmas[0] == pytest.approx(x.std(), abs=1e-6)
    assert fit.weights[0] == pytest.approx(1.0)


def test_two_component_recovery_and_invariants():
    x = mixture_sample(8000, [0.68, 0.32], [-1.417, 0.103], [0.345, 0.702], seed=1)
    fit = fit_gmm(x, 2, seed=3)
    assert fit.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert list(fit.means) == sorted(fit.means)
    assert fit.weights[0] == pytest.approx(0.68, abs=0.05)
    assert fit.means[0] == pytest.approx(-1.417, abs=0.08)
    assert fit.monotone and fit.history
    assert fit.aic == pytest.approx(2 * 5 - 2 * fit.log_likelihood)
    assert fit.bic == pytest.approx(5 * math.log(len(x)) - 2 * fit.log_likelihood)
    # responsibility-weighted moments at convergence
    dens = fit.weights * np.exp(-0.5 * ((x[:, None] - fit.means) / fit.sigmas) ** 2) / fit.sigmas
    resp = dens / dens.sum(axis=1, keepdims=True)
    assert (resp.T @ x) / resp.sum(axis=0) == pytest.approx(fit.means, abs=1e-3)
    grid = np.linspace(-8, 8, 20001)
    assert trapezoid(fit.density(grid), grid) == pytest.approx(1.0, abs=1e-6)


def test_select_k_separated_and_flat():
    two = mixture_sample(3000, [0.5, 0.5], [-3, 3], [1, 1], seed=2)
    sel = select_k(two, k_max=4, seed=0, restarts=3)
    assert sel.k == sel.k_aic == sel.k_bic == 2
    flat = np.random.default_rng(3).normal(size=3000)
    assert select_k(flat, k_max=3, seed=0, restarts=3).k_bic == 1


def test_marginal_choice_picks_largest_drop():
    class F:
        def __init__(self, k, aic):
            self.k, self.aic = k, aic

    assert marginal_choice([F(1, 100), F(2, 60), F(3, 50)], "aic") == 2
    assert marginal_choice([F(1, 100), F(2, 101)], "aic") == 1


def test_deterministic_given_seed():
    x = mixture_sample(1000, [0.7, 0.3], [0, 2], [0.5, 0.5], seed=4)
    a, b = fit_gmm(x, 2, seed=7), fit_gmm(x, 2, seed=7)
    assert a.log_likelihood == b.log_likelihood and np.array_equal(a.means, b.means)


def test_input_validation():
    with pytest.raises(ValueError):
        fit_gmm([1.0, 2.0, 3.0], 1)
    with pytest.raises(ValueError):
        fit_gmm([1.0, np.nan, 2, 3, 4], 1)


def test_all_collapsed_raises():
    # two distinct values and k=3: some component must collapse onto a point
    x = np.array([0.0] * 20 + [1.0] * 20)
    with pytest.raises(MixtureError):
        fit_gmm(x, 3, seed=0, restarts=2)


def test_contrary_fraction():
    assert contrary_fraction([1, -1, -1, -1], "negative") == 0.25
    assert contrary_fraction([-1, -2], "negative") == 0.0
    assert contrary_fraction([0.0, 1.0], "positive") == 0.0
    with pytest.raises(ValueError):
        contrary_fraction([], "positive")
