"""Probability metrics, Gaussian closed forms, histograms and the sampling operator."""

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    EmptySamples,
    GaussianState,
    GridMismatch,
    InvalidVariance,
    NonInvertibleMap,
    NotPositiveSemiDefinite,
    as_rng,
    as_vector,
    sample_gaussian,
    symmetrize,
)


def trapz(y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


@dataclass
class GriddedDensity1D:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise GridMismatch("grid and values must be 1-D of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise GridMismatch("grid nodes must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("density values must be non-negative")

    def mass(self):
        return trapz(self.values, self.grid)

    def normalized(self):
        z = self.mass()
        if not z > 0:
            raise ValueError("density has zero mass")
        return GriddedDensity1D(self.grid, self.values / z)

    def mean(self):
        return trapz(self.grid * self.values, self.grid) / self.mass()

    def argmax(self):
        return int(np.argmax(self.values))


@dataclass
class WeightedSamples:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("one weight per point required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")

    @classmethod
    def uniform(cls, points):
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    def __len__(self):
        return self.points.shape[0]

    def expectation(self, f):
        vals = np.asarray([f(p) for p in self.points], dtype=float)
        return float(self.weights @ vals)

    def mean(self):
        return self.weights @ self.points

    def cov(self):
        d = self.points - self.mean()
        return (self.weights[:, None] * d).T @ d


def gaussian_log_density(g, x):
    x = as_vector(x, g.dim)
    c = symmetrize(g.cov)
    try:
        L = np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        raise NotPositiveSemiDefinite("covariance must be positive definite") from None
    z = np.linalg.solve(L, x - g.mean)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * z @ z - 0.5 * logdet - 0.5 * g.dim * math.log(2.0 * math.pi))


def _check_var(*vs):
    for v in vs:
        if not v > 0:
            raise InvalidVariance(f"variance must be positive, got {v}")


def hellinger_gaussian_1d(m1, var1, m2, var2):
    _check_var(var1, var2)
    s = var1 + var2
    bc = math.sqrt(math.exp(-((m1 - m2) ** 2) / (2.0 * s)) * 2.0 * math.sqrt(var1 * var2) / s)
    return math.sqrt(max(0.0, 1.0 - bc))


def kl_gaussian_1d(m1, var1, m2, var2):
    """KL(N(m1,var1) || N(m2,var2))."""
    _check_var(var1, var2)
    return 0.5 * math.log(var2 / var1) + 0.5 * (var1 / var2 - 1.0) + (m2 - m1) ** 2 / (2.0 * var2)


def tv_gaussian_1d(m1, var1, m2, var2):
    """Total variation between two 1-D Gaussians from the crossing points of the densities."""
    _check_var(var1, var2)
    from scipy.stats import norm

    s1, s2 = math.sqrt(var1), math.sqrt(var2)
    if abs(var1 - var2) <= 1e-14 * max(var1, var2):
        if m1 == m2:
            return 0.0
        return float(2.0 * norm.cdf(abs(m1 - m2) / (2.0 * s1)) - 1.0)
    # solve log p1 = log p2, a quadratic in x
    a = 1.0 / var2 - 1.0 / var1
    b = 2.0 * (m1 / var1 - m2 / var2)
    c = m2**2 / var2 - m1**2 / var1 + math.log(var2 / var1)
    disc = max(b * b - 4 * a * c, 0.0)
    r = sorted([(-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)])
    edges = [-math.inf, r[0], r[1], math.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        p = norm.cdf(hi, m1, s1) - norm.cdf(lo, m1, s1)
        q = norm.cdf(hi, m2, s2) - norm.cdf(lo, m2, s2)
        total += abs(p - q)
    return 0.5 * total


def _shared(p, q):
    if p.grid.shape != q.grid.shape or np.any(p.grid != q.grid):
        raise GridMismatch("densities live on different grids")
    return p.grid


def tv_distance_grid(p, q):
    x = _shared(p, q)
    return 0.5 * trapz(np.abs(p.values - q.values), x)


def hellinger_distance_grid(p, q):
    x = _shared(p, q)
    return math.sqrt(max(0.0, trapz(0.5 * (np.sqrt(p.values) - np.sqrt(q.values)) ** 2, x)))


def empirical_histogram(samples, bin_centers):
    """Histogram on center-based bins; the first and last bins absorb the half-lines."""
    s = np.ravel(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise EmptySamples("histogram needs at least one sample")
    c = np.asarray(bin_centers, dtype=float)
    if np.any(np.diff(c) <= 0):
        raise GridMismatch("bin centers must be increasing")
    inner = 0.5 * (c[1:] + c[:-1])
    idx = np.searchsorted(inner, s, side="right")
    counts = np.bincount(idx, minlength=c.size).astype(float)
    z = trapz(counts, c)
    if z <= 0:
        # a single bin with all mass on an edge node still needs a shape
        z = counts.sum() * (c[1] - c[0] if c.size > 1 else 1.0)
    return GriddedDensity1D(c, counts / z)


def gaussian_density_grid(grid, m, var):
    grid = np.asarray(grid, dtype=float)
    return GriddedDensity1D(grid, np.exp(-((grid - m) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var))


def sampling_operator(mu, n, rng):
    """S^N: n i.i.d. draws from mu with uniform weights."""
    rng = as_rng(rng)
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(mu, GaussianState):
        pts = sample_gaussian(mu, rng, size=n)
    else:
        idx = rng.choice(len(mu), size=n, p=mu.weights)
        pts = mu.points[idx]
    return WeightedSamples.uniform(pts)


def pushforward_grid(p, fmap, new_grid=None, inverse=None, tol=1e-12):
    """Density of the image of p under a 1-D map.

    The map is split into monotone segments on the source grid; each segment
    contributes ρ(G⁻¹(v)) |dG⁻¹/dv| on the target grid, with the inverse
    obtained by interpolation when not supplied.
    """
    x = p.grid
    gx = np.asarray(fmap(x), dtype=float)
    dg = np.diff(gx)
    if np.any(dg == 0) and np.all(np.abs(dg) <= tol):
        raise NonInvertibleMap("map is constant on the grid")
    sign = np.sign(dg)
    # split into monotone runs
    cuts = [0]
    for k in range(1, sign.size):
        if sign[k] != sign[k - 1] and sign[k] != 0:
            cuts.append(k)
    cuts.append(sign.size)
    if np.any(sign == 0):
        raise NonInvertibleMap("map is flat on part of the grid")
    if new_grid is None:
        new_grid = np.linspace(gx.min(), gx.max(), x.size)
    new_grid = np.asarray(new_grid, dtype=float)
    out = np.zeros_like(new_grid)
    for a, b in zip(cuts[:-1], cuts[1:]):
        xs, ys = x[a : b + 1], gx[a : b + 1]
        if ys[-1] < ys[0]:
            xs, ys = xs[::-1], ys[::-1]
        inside = (new_grid >= ys[0]) & (new_grid <= ys[-1])
        if not np.any(inside):
            continue
        v = new_grid[inside]
        if inverse is not None and len(cuts) == 2:
            xi = np.asarray(inverse(v), dtype=float)
        else:
            xi = np.interp(v, ys, xs)
        dxdy = np.interp(v, 0.5 * (ys[1:] + ys[:-1]), np.diff(xs) / np.diff(ys))
        out[inside] += np.interp(xi, x, p.values) * np.abs(dxdy)
    return GriddedDensity1D(new_grid, out)
