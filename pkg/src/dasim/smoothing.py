"""Smoothing posteriors, the noise/signal reparametrization and the Kalman smoothers."""

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DegeneratePosterior,
    DimensionMismatch,
    GaussianState,
    NonFiniteState,
    SingularPrecision,
    ZeroModelNoise,
    as_matrix,
    as_vector,
    spd_inverse,
)
from .prob import GriddedDensity1D, trapz


def logistic_grid():
    """Default grid for logistic posteriors: [0.01, 0.99] in steps of 0.0005."""
    return np.round(0.01 + 0.0005 * np.arange(1961), 12)


@dataclass
class SmoothingProblem:
    """Model, observation operator, noise levels, prior and data y_1..y_J.

    `sigma=None` (or an all-zero matrix) selects deterministic dynamics.
    """

    model: object
    obs: object
    sigma: object
    gamma: object
    m0: object
    C0: object
    y: object

    def __post_init__(self):
        n = self.model.dim
        self.m0 = as_vector(self.m0, n)
        self.C0 = as_matrix(self.C0, n)
        self.gamma = as_matrix(self.gamma, self.obs.obs_dim)
        if self.sigma is not None:
            self.sigma = as_matrix(self.sigma, n)
            if not np.any(self.sigma):
                self.sigma = None
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(-1, self.obs.obs_dim)
        if y.ndim != 2 or y.shape[1] != self.obs.obs_dim:
            raise DimensionMismatch("data must have shape (J, obs_dim)")
        self.y = y
        self.C0_inv = spd_inverse(self.C0)
        self.gamma_inv = spd_inverse(self.gamma)
        self.sigma_inv = None if self.sigma is None else spd_inverse(self.sigma)
        # scalar problems get a pure-float path for long MCMC runs
        self._scalar = None
        if n == 1 and self.obs.obs_dim == 1 and hasattr(self.model, "apply_float"):
            self._scalar = (
                self.model.apply_float,
                float(self.obs.H[0, 0]),
                float(self.m0[0]),
                float(self.C0_inv[0, 0]),
                float(self.gamma_inv[0, 0]),
                [float(t) for t in self.y[:, 0]],
            )

    @property
    def J(self):
        return self.y.shape[0]

    @property
    def n(self):
        return self.model.dim

    @property
    def deterministic(self):
        return self.sigma is None

    def with_data(self, y):
        return SmoothingProblem(self.model, self.obs, self.sigma, self.gamma, self.m0, self.C0, y)

    def _path(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 1 and self.n == 1:
            v = v[:, None]
        if v.shape != (self.J + 1, self.n):
            raise DimensionMismatch(f"path must have shape {(self.J + 1, self.n)}, got {v.shape}")
        return v

    def _require_stochastic(self):
        if self.sigma is None:
            raise ZeroModelNoise("operation needs a positive-definite model noise covariance")


def _quad(r, prec):
    """Sum over rows of ½ rᵀ P r."""
    return 0.5 * float(np.einsum("ij,jk,ik->", r, prec, r))


def misfit_phi(p, v):
    v = p._path(v)
    r = p.y - p.obs.apply(v[1:])
    return _quad(r, p.gamma_inv)


def background_j(p, v):
    p._require_stochastic()
    v = p._path(v)
    d0 = (v[0] - p.m0)[None, :]
    dj = v[1:] - p.model.apply(v[:-1])
    return _quad(d0, p.C0_inv) + _quad(dj, p.sigma_inv)


def neg_log_posterior(p, v):
    return background_j(p, v) + misfit_phi(p, v)


def orbit(p, v0):
    """Deterministic orbit v_0..v_J from v_0."""
    v0 = as_vector(v0, p.n)
    out = np.empty((p.J + 1, p.n))
    out[0] = v0
    v = v0
    for j in range(p.J):
        v = p.model.apply(v)
        out[j + 1] = v
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("orbit became non-finite")
    return out


def _neg_log_posterior_det_scalar(p, x):
    f, h, m0, c0i, gi, ys = p._scalar
    d = x - m0
    total = 0.5 * c0i * d * d
    for yj in ys:
        x = f(x)
        r = yj - h * x
        total += 0.5 * gi * r * r
    if not math.isfinite(total):
        raise NonFiniteState("orbit became non-finite")
    return total


def neg_log_posterior_det(p, v0):
    if p._scalar is not None and np.ndim(v0) <= 1 and np.size(v0) == 1:
        return _neg_log_posterior_det_scalar(p, float(np.ravel(v0)[0]))
    v0 = as_vector(v0, p.n)
    d0 = (v0 - p.m0)[None, :]
    return _quad(d0, p.C0_inv) + misfit_phi(p, orbit(p, v0))


def noise_to_signal(p, xi):
    """G: (v_0, ξ_0..ξ_{J-1}) -> path with v_{j+1} = Ψ(v_j) + ξ_j."""
    xi = p._path(xi)
    out = np.empty_like(xi)
    out[0] = xi[0]
    for j in range(p.J):
        out[j + 1] = p.model.apply(out[j]) + xi[j + 1]
    return out


def signal_to_noise(p, v):
    v = p._path(v)
    out = np.empty_like(v)
    out[0] = v[0]
    out[1:] = v[1:] - p.model.apply(v[:-1])
    return out


def background_j_noise(p, xi):
    p._require_stochastic()
    xi = p._path(xi)
    d0 = (xi[0] - p.m0)[None, :]
    return _quad(d0, p.C0_inv) + _quad(xi[1:], p.sigma_inv)


def misfit_phi_noise(p, xi):
    return misfit_phi(p, noise_to_signal(p, xi))


def neg_log_posterior_noise(p, xi):
    return background_j_noise(p, xi) + misfit_phi_noise(p, xi)


def grid_posterior_1d(p, grid):
    """exp(-I_det) on a grid, shifted by its minimum and normalized by the trapezoid rule."""
    if p.n != 1:
        raise DimensionMismatch("grid posteriors need a scalar state")
    grid = np.asarray(grid, dtype=float)
    vals = np.empty(grid.size)
    for k, x in enumerate(grid):
        try:
            vals[k] = neg_log_posterior_det(p, [x])
        except NonFiniteState:
            vals[k] = np.inf
    finite = np.isfinite(vals)
    if not np.any(finite):
        raise DegeneratePosterior("I_det is non-finite on the whole grid")
    dens = np.exp(-(vals - vals[finite].min()))
    z = trapz(dens, grid)
    if not z > 0:
        raise DegeneratePosterior("posterior mass underflows on the grid")
    return GriddedDensity1D(grid, dens / z)


@dataclass
class BlockTridiagonal:
    """Symmetric block-tridiagonal matrix: diag[b] = L_bb, upper[b] = L_{b,b+1}."""

    diag: np.ndarray
    upper: np.ndarray

    def dense(self):
        nb, n, _ = self.diag.shape
        out = np.zeros((nb * n, nb * n))
        for b in range(nb):
            out[b * n : (b + 1) * n, b * n : (b + 1) * n] = self.diag[b]
        for b in range(nb - 1):
            out[b * n : (b + 1) * n, (b + 1) * n : (b + 2) * n] = self.upper[b]
            out[(b + 1) * n : (b + 2) * n, b * n : (b + 1) * n] = self.upper[b].T
        return out


def block_tridiagonal_solve(L, r):
    """Block LU: forward elimination then back substitution.

    Also returns the last Schur complement, which is the precision of the
    marginal on the final block.
    """
    nb = L.diag.shape[0]
    schur = [None] * nb
    rhs = [None] * nb
    schur[0] = L.diag[0].copy()
    rhs[0] = r[0].copy()
    for b in range(1, nb):
        lower = L.upper[b - 1].T
        try:
            w = np.linalg.solve(schur[b - 1], np.column_stack([L.upper[b - 1], rhs[b - 1]]))
        except np.linalg.LinAlgError:
            raise SingularPrecision(f"singular pivot block at {b - 1}") from None
        schur[b] = L.diag[b] - lower @ w[:, :-1]
        rhs[b] = r[b] - lower @ w[:, -1]
    x = np.empty_like(r)
    try:
        x[-1] = np.linalg.solve(schur[-1], rhs[-1])
        for b in range(nb - 2, -1, -1):
            x[b] = np.linalg.solve(schur[b], rhs[b] - L.upper[b] @ x[b + 1])
    except np.linalg.LinAlgError:
        raise SingularPrecision("singular pivot block") from None
    return x, schur[-1]


def _linear_parts(p):
    M = p.model.matrix
    if M is None:
        raise TypeError("Kalman smoothers need a linear model")
    return M, p.obs.H


def kalman_smoother(p):
    """Posterior mean path and block-tridiagonal precision for linear-Gaussian dynamics.

    Blocks are indexed b = 0..J with block b belonging to v_b.
    """
    p._require_stochastic()
    M, H = _linear_parts(p)
    n, J = p.n, p.J
    Si = p.sigma_inv
    HGH = H.T @ p.gamma_inv @ H
    MSM = M.T @ Si @ M
    diag = np.empty((J + 1, n, n))
    upper = np.empty((J, n, n))
    r = np.empty((J + 1, n))
    diag[0] = p.C0_inv + (MSM if J > 0 else 0.0)
    r[0] = p.C0_inv @ p.m0
    for b in range(1, J + 1):
        diag[b] = HGH + Si + (MSM if b < J else 0.0)
        r[b] = H.T @ p.gamma_inv @ p.y[b - 1]
    for b in range(J):
        upper[b] = -M.T @ Si
    L = BlockTridiagonal(diag, upper)
    mean, last = block_tridiagonal_solve(L, r)
    return mean, L, spd_inverse(last)


def kalman_smoother_det(p):
    """Gaussian posterior on v_0 under deterministic linear dynamics."""
    M, H = _linear_parts(p)
    prec = p.C0_inv.copy()
    rhs = p.C0_inv @ p.m0
    Mp = np.eye(p.n)
    for j in range(p.J):
        Mp = M @ Mp
        prec += Mp.T @ H.T @ p.gamma_inv @ H @ Mp
        rhs += Mp.T @ H.T @ p.gamma_inv @ p.y[j]
    cov = spd_inverse(prec)
    return GaussianState(cov @ rhs, cov)
