"""Shared types, seeded random streams and small dense linear algebra."""

from dataclasses import dataclass

import numpy as np


class DasimError(Exception):
    """Base class for structured toolkit errors."""


class NotPositiveSemiDefinite(DasimError):
    pass


class DimensionMismatch(DasimError):
    pass


class NonFiniteState(DasimError):
    pass


class ZeroModelNoise(DasimError):
    pass


class DegeneratePosterior(DasimError):
    pass


class SingularPrecision(DasimError):
    pass


class InvalidVariance(DasimError):
    pass


class GridMismatch(DasimError):
    pass


class EmptySamples(DasimError):
    pass


class NonInvertibleMap(DasimError):
    pass


class NonFiniteObjective(DasimError):
    pass


class BlowUpLimit(DasimError):
    pass


class ZeroWeightSum(DasimError):
    pass


class NonEnsembleFilter(DasimError):
    pass


class ConfigMismatch(DasimError):
    pass


class DegenerateCase(DasimError):
    pass


# Stream ids keep the noise sources of a twin experiment independent, so
# switching the assimilation method never changes the truth or the data.
STREAM_TRUTH_INIT = 0
STREAM_MODEL_NOISE = 1
STREAM_OBS_NOISE = 2
STREAM_FILTER_INIT = 3
STREAM_PROPOSAL = 4
STREAM_PERTURB = 5
STREAM_RESAMPLE = 6
STREAM_ACCEPT = 7
STREAM_DIAGNOSTIC = 8

RNG_VERSION = "pcg64-seedseq-v1"


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def generator(self):
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def make_rng(seed, stream_id=0):
    """Generator for the (seed, stream_id) pair; identical pairs give identical draws."""
    return RngStream(int(seed), int(stream_id)).generator()


def as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return make_rng(rng)


def as_matrix(a, n=None):
    """Promote scalars and vectors to a 2-D float array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1) if n is None else a * np.eye(n)
    elif a.ndim == 1:
        a = np.diag(a)
    if n is not None and a.shape != (n, n):
        raise DimensionMismatch(f"expected {n}x{n} matrix, got {a.shape}")
    return a


def as_vector(v, n=None):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise DimensionMismatch(f"expected dimension {n}, got {v.shape[0]}")
    return v


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def _check_psd_floor(a):
    w = np.linalg.eigvalsh(a)
    scale = max(abs(np.trace(a)), np.max(np.abs(w)) if w.size else 0.0)
    if w.size and w[0] < -1e-10 * scale:
        raise NotPositiveSemiDefinite(f"smallest eigenvalue {w[0]:.3e} below floor")
    return w


def cholesky_factor(a):
    """Lower-triangular L with L Lᵀ = (a + aᵀ)/2.

    Singular PSD input is handled through an eigen-decomposition followed by a
    QR step, so the result is still lower triangular.
    """
    a = symmetrize(np.atleast_2d(a))
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch("cholesky_factor needs a square matrix")
    if not np.all(np.isfinite(a)):
        raise NotPositiveSemiDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    _check_psd_floor(a)
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    b = np.sqrt(w)[:, None] * v.T  # a = bᵀ b
    _, r = np.linalg.qr(b)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return (signs[:, None] * r).T


def sqrtm_psd(a):
    """Symmetric square root through the eigen-decomposition."""
    a = symmetrize(a)
    _check_psd_floor(a)
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def spd_inverse(a):
    a = symmetrize(np.atleast_2d(a))
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NotPositiveSemiDefinite("matrix is not positive definite") from None
    ci = np.linalg.inv(c)
    return ci.T @ ci


@dataclass(frozen=True)
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = as_vector(self.mean)
        c = symmetrize(as_matrix(self.cov, m.shape[0]))
        _check_psd_floor(c)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)

    @property
    def dim(self):
        return self.mean.shape[0]


def sample_gaussian(g, rng, size=None):
    """Draw mean + L z. A zero covariance returns the mean exactly."""
    rng = as_rng(rng)
    n = g.dim
    if not np.any(g.cov):
        return g.mean.copy() if size is None else np.tile(g.mean, (size, 1))
    L = cholesky_factor(g.cov)
    if size is None:
        return g.mean + L @ rng.standard_normal(n)
    return g.mean + rng.standard_normal((size, n)) @ L.T


def woodbury_inverse(a, u, c, v):
    """(A + U C V)^{-1} via A^{-1} - A^{-1} U (C^{-1} + V A^{-1} U)^{-1} V A^{-1}."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if u.shape != (a.shape[0], c.shape[0]) or v.shape != (c.shape[0], a.shape[0]):
        raise DimensionMismatch("woodbury_inverse: incompatible shapes")
    ai = spd_inverse(a)
    ci = spd_inverse(c)
    inner = ci + v @ ai @ u
    return ai - ai @ u @ np.linalg.solve(inner, v @ ai)
