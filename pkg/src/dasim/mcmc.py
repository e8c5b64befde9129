"""Metropolis-Hastings samplers for the smoothing posteriors."""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BlowUpLimit,
    NonFiniteState,
    as_matrix,
    as_rng,
    cholesky_factor,
)
from .smoothing import (
    misfit_phi,
    neg_log_posterior_det,
    noise_to_signal,
)

SAMPLERS = ("rwm", "ids", "pcn", "pcn_dynamics")


@dataclass
class McmcConfig:
    kind: str = "rwm"
    beta: float = 0.1
    C_prop: object = None  # RWM proposal covariance, defaults to C0
    n_steps: int = 10000
    burn_in: int = None  # None: 0 when started at the truth, else 10% of n_steps
    thin: int = 1
    init_at_truth: bool = False
    blowup_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.kind!r}")
        if self.kind != "rwm" and not 0.0 < self.beta <= 1.0:
            raise ValueError("pCN samplers need beta in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.thin < 1 or self.n_steps < 0:
            raise ValueError("invalid chain length or thinning")

    def resolved_burn_in(self):
        if self.burn_in is not None:
            return int(self.burn_in)
        return 0 if self.init_at_truth else self.n_steps // 10


@dataclass
class ChainState:
    position: np.ndarray
    potential: float
    steps: int = 0
    accepted: int = 0
    blowups: int = 0
    extra: dict = field(default_factory=dict)


def compute_F(p, v):
    """Σ_j ½|Ψ(v_j)|²_Σ − ⟨v_{j+1}, Ψ(v_j)⟩_Σ."""
    p._require_stochastic()
    v = p._path(v)
    psi = p.model.apply(v[:-1])
    Si = p.sigma_inv
    return float(
        0.5 * np.einsum("ij,jk,ik->", psi, Si, psi) - np.einsum("ij,jk,ik->", v[1:], Si, psi)
    )


def _safe(fn, *args):
    try:
        val = fn(*args)
    except (NonFiniteState, FloatingPointError, OverflowError):
        return math.inf
    return val if math.isfinite(val) else math.inf


def _prior_factors(p):
    """Cholesky factors of C0 and Σ, cached on the problem."""
    key = "_mcmc_factors"
    if not hasattr(p, key):
        L0 = cholesky_factor(p.C0)
        LS = cholesky_factor(p.sigma) if p.sigma is not None else None
        setattr(p, key, (L0, LS))
    return getattr(p, key)


def _reference_draw(p, rng):
    """ι ~ N(0, blockdiag(C0, Σ, ..., Σ)) as a (J+1, n) array."""
    L0, LS = _prior_factors(p)
    z = rng.standard_normal((p.J + 1, p.n))
    out = np.empty_like(z)
    out[0] = L0 @ z[0]
    out[1:] = z[1:] @ LS.T
    return out


def _reference_mean(p):
    m = np.zeros((p.J + 1, p.n))
    m[0] = p.m0
    return m


def potential(p, kind, x):
    if kind == "rwm":
        return _safe(neg_log_posterior_det, p, x)
    if kind == "ids":
        return _safe(misfit_phi, p, x)
    if kind == "pcn":
        return _safe(lambda q, v: misfit_phi(q, v) + compute_F(q, v), p, x)
    if kind == "pcn_dynamics":
        return _safe(lambda q, xi: misfit_phi(q, noise_to_signal(q, xi)), p, x)
    raise ValueError(kind)


def _accept(s, w, pot_w, rng):
    s.steps += 1
    u = rng.random()
    if not math.isfinite(pot_w):
        s.blowups += 1
        return s
    log_a = s.potential - pot_w
    if log_a >= 0 or math.log(u) < log_a:
        s.position = w
        s.potential = pot_w
        s.accepted += 1
    return s


def rwm_step(p, s, cfg, rng, chol=None):
    """w = u + β ι with ι ~ N(0, C_prop); accept with 1 ∧ exp(I_det(u) − I_det(w))."""
    if chol is None:
        chol = cholesky_factor(as_matrix(cfg.C_prop if cfg.C_prop is not None else p.C0, p.n))
    w = s.position + cfg.beta * (chol @ rng.standard_normal(p.n))
    return _accept(s, w, potential(p, "rwm", w), rng)


def ids_step(p, s, cfg, rng):
    """Fresh prior path as proposal; accept by the misfit difference only."""
    p._require_stochastic()
    xi = _reference_mean(p) + _reference_draw(p, rng)
    try:
        w = noise_to_signal(p, xi)
    except NonFiniteState:
        w = None
    pot = potential(p, "ids", w) if w is not None and np.all(np.isfinite(w)) else math.inf
    return _accept(s, w, pot, rng)


def _pcn_proposal(p, u, beta, rng):
    m = _reference_mean(p)
    return m + math.sqrt(1.0 - beta * beta) * (u - m) + beta * _reference_draw(p, rng)


def pcn_step(p, s, cfg, rng):
    p._require_stochastic()
    w = _pcn_proposal(p, s.position, cfg.beta, rng)
    return _accept(s, w, potential(p, "pcn", w), rng)


def pcn_dynamics_step(p, s, cfg, rng):
    """pCN proposal on (v_0, ξ); acceptance uses the misfit of G(ξ) only."""
    p._require_stochastic()
    w = _pcn_proposal(p, s.position, cfg.beta, rng)
    return _accept(s, w, potential(p, "pcn_dynamics", w), rng)


@dataclass
class ChainResult:
    samples: np.ndarray
    acceptance_rate: float
    running_mean: np.ndarray
    steps: int
    accepted: int
    blowups: int


def default_init(p, kind, rng=None):
    if kind == "rwm":
        return p.m0.copy()
    xi = _reference_mean(p)
    if rng is not None:
        xi = xi + _reference_draw(p, as_rng(rng))
    if kind == "pcn_dynamics":
        return xi
    return noise_to_signal(p, xi)


def run_chain(p, cfg, init=None, rng=None):
    """Burn-in followed by cfg.n_steps recorded steps (thinned).

    For the pCN dynamics sampler `init` is a noise vector and the recorded
    samples are the corresponding signal paths.
    """
    rng = as_rng(0 if rng is None else rng)
    kind = cfg.kind
    if init is None:
        init = default_init(p, kind)
    x0 = np.array(init, dtype=float)
    if kind == "rwm":
        x0 = x0.reshape(p.n)
    else:
        x0 = p._path(x0).copy()
    s = ChainState(x0, potential(p, kind, x0))
    if not math.isfinite(s.potential):
        raise NonFiniteState("initial state has non-finite potential")
    burn = cfg.resolved_burn_in()
    total = burn + int(cfg.n_steps)
    if cfg.n_steps == 0:
        return ChainResult(np.empty((0,) + x0.shape), math.nan, np.empty((0,) + x0.shape), 0, 0, 0)
    if kind == "rwm":
        chol = cholesky_factor(as_matrix(cfg.C_prop if cfg.C_prop is not None else p.C0, p.n))

        def step(st):
            return rwm_step(p, st, cfg, rng, chol)
    else:
        fn = {"ids": ids_step, "pcn": pcn_step, "pcn_dynamics": pcn_dynamics_step}[kind]

        def step(st):
            return fn(p, st, cfg, rng)

    n_keep = (int(cfg.n_steps) + cfg.thin - 1) // cfg.thin
    samples = np.empty((n_keep,) + x0.shape)
    k = 0
    for it in range(total):
        s = step(s)
        if it >= burn and (it - burn) % cfg.thin == 0:
            samples[k] = s.position
            k += 1
    if s.blowups > cfg.blowup_fraction * s.steps:
        raise BlowUpLimit(f"{s.blowups} of {s.steps} proposals had non-finite potential")
    if kind == "pcn_dynamics":
        samples = np.array([noise_to_signal(p, x) for x in samples])
    counts = np.arange(1, n_keep + 1).reshape((-1,) + (1,) * (samples.ndim - 1))
    running = np.cumsum(samples, axis=0) / counts
    return ChainResult(samples, s.accepted / s.steps, running, s.steps, s.accepted, s.blowups)
