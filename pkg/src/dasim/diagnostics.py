"""Error statistics, rank histograms and 1-D Kalman covariance analysis."""

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigMismatch, DegenerateCase, NonEnsembleFilter, as_matrix, as_rng, cholesky_factor


def kalman_1d_map(c, lam, sigma2, gamma2):
    """Covariance update g(c) of the scalar Kalman filter."""
    a = lam * lam * c + sigma2
    return gamma2 * a / (gamma2 + a)


def kalman_1d_map_derivative(c, lam, sigma2, gamma2):
    return lam * lam * gamma2**2 / (gamma2 + lam * lam * c + sigma2) ** 2


@dataclass
class FixedPoints:
    c_plus: float
    c_minus: float
    stable_plus: bool
    stable_minus: bool
    slope_plus: float
    slope_minus: float


def kalman_1d_fixed_points(lam, sigma2, gamma2):
    """Roots of λ²c² + (γ²(1−λ²) + σ²)c − γ²σ² = 0 and their stability."""
    l2 = lam * lam
    if l2 == 0:
        raise DegenerateCase("λ = 0: g is constant, equal to γ²σ²/(γ²+σ²)")
    b = gamma2 + sigma2 - gamma2 * l2
    if sigma2 == 0:
        # named as in the deterministic analysis: 0 and γ²(λ²−1)/λ²
        c_plus, c_minus = 0.0, gamma2 * (l2 - 1.0) / l2
    else:
        # cancellation-free roots; the product of the roots is −γ²σ²/λ² < 0
        q = -0.5 * (b + math.copysign(math.sqrt(b * b + 4.0 * l2 * gamma2 * sigma2), b))
        r1, r2 = q / l2, -gamma2 * sigma2 / q
        c_plus, c_minus = max(r1, r2), min(r1, r2)
    gp = kalman_1d_map_derivative(c_plus, lam, sigma2, gamma2)
    denom = gamma2 + l2 * c_minus + sigma2
    gm = kalman_1d_map_derivative(c_minus, lam, sigma2, gamma2) if denom != 0 else math.inf
    return FixedPoints(c_plus, c_minus, gp < 1.0, gm < 1.0, gp, gm)


def iterate_kalman_1d(c0, lam, sigma2, gamma2, steps):
    out = np.empty(steps + 1)
    out[0] = c = float(c0)
    for j in range(steps):
        c = kalman_1d_map(c, lam, sigma2, gamma2)
        out[j + 1] = c
    return out


def excess_kurtosis(x):
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0
    return float(np.mean(d**4) / m2**2 - 3.0)


@dataclass
class ErrorSeries:
    errors: np.ndarray
    running_mean: np.ndarray
    window_mean: float
    window_sd: float
    window_kurtosis: float
    window: tuple


def error_series(errors_or_run, window=None):
    """Summary of |e_j|; the default window is the second half of the run."""
    if hasattr(errors_or_run, "error"):
        e = np.asarray(errors_or_run.error, dtype=float)
    elif hasattr(errors_or_run, "truth"):
        e = np.linalg.norm(errors_or_run.mean - errors_or_run.truth, axis=1)
    else:
        e = np.asarray(errors_or_run, dtype=float)
    n = e.size
    run = np.cumsum(e) / np.arange(1, n + 1)
    lo, hi = window if window is not None else (n // 2, n)
    w = e[lo:hi]
    return ErrorSeries(e, run, float(w.mean()), float(w.std()), excess_kurtosis(w), (lo, hi))


@dataclass
class RankHistogram:
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())


def rank_histogram(ensembles, observations, gamma, component=0, rng=None, H=None):
    """Rank each observation among noise-perturbed members; ranks 1..N+1 map to bins 0..N.

    `ensembles` is a sequence of (N, n) arrays matched with `observations` (J, m).
    """
    if ensembles is None or len(ensembles) == 0 or any(e is None for e in ensembles):
        raise NonEnsembleFilter("rank histograms need ensemble records")
    rng = as_rng(0 if rng is None else rng)
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if obs.shape[0] == 1 and len(ensembles) > 1:
        obs = obs.T
    m = obs.shape[1]
    L = cholesky_factor(as_matrix(gamma, m))
    N = np.asarray(ensembles[0]).shape[0]
    counts = np.zeros(N + 1, dtype=int)
    for ens, y in zip(ensembles, obs):
        ens = np.atleast_2d(np.asarray(ens, dtype=float))
        if ens.shape[0] == 1 and N > 1:
            ens = ens.T
        pred = ens if H is None else ens @ np.atleast_2d(H).T
        pert = pred[:, :m] + rng.standard_normal((ens.shape[0], m)) @ L.T
        rank = int(np.sum(pert[:, component] < y[component]))
        counts[rank] += 1
    return RankHistogram(counts)


@dataclass
class ComparisonRow:
    algorithm: str
    window_mean: float
    window_sd: float
    window_kurtosis: float
    blowup_step: object


def compare_filters(runs, window=None):
    """Summaries for filter runs that must share one truth and one data sequence."""
    if not runs:
        return []
    ref = runs[0]
    for r in runs[1:]:
        if r.truth.shape != ref.truth.shape or not (
            np.array_equal(r.truth, ref.truth) and np.array_equal(r.y, ref.y)
        ):
            raise ConfigMismatch("runs do not share truth and data")
    rows = []
    for r in runs:
        es = error_series(r.error, window)
        rows.append(ComparisonRow(r.algorithm, es.window_mean, es.window_sd, es.window_kurtosis, r.blowup_step))
    return rows
