"""MAP estimation by derivative-free minimization: 4DVAR and weak-constraint 4DVAR."""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import NonFiniteObjective, NonFiniteState
from .smoothing import neg_log_posterior, neg_log_posterior_det

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class OptimizerConfig:
    max_iterations: int = 10000
    initial_scale: float = 0.05
    ftol: float = 1e-10
    xtol: float = 1e-8
    restarts: int = 0  # re-run from the best point until it stops moving
    starts: list = field(default_factory=list)

    def __post_init__(self):
        if self.ftol <= 0 or self.xtol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class VarResult:
    minimizer: np.ndarray
    value: float
    converged: bool
    start: np.ndarray
    iterations: int
    best: bool = False


def _eval(f, x):
    try:
        val = float(f(x))
    except (NonFiniteState, OverflowError, FloatingPointError):
        return math.inf
    return val if math.isfinite(val) else math.inf


def _initial_simplex(x0, scale):
    d = x0.size
    simplex = np.tile(x0, (d + 1, 1))
    for k in range(d):
        step = scale * (abs(x0[k]) if x0[k] != 0 else 1.0)
        if step == 0:
            step = scale
        simplex[k + 1, k] += step
    return simplex


def _nelder_mead_once(f, x0, cfg, budget):
    sim = _initial_simplex(x0, cfg.initial_scale)
    fs = np.array([_eval(f, x) for x in sim])
    it = 0
    converged = False
    while it < budget:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        spread = fs[-1] - fs[0]
        diam = np.max(np.abs(sim[1:] - sim[0]))
        if math.isfinite(spread) and spread <= cfg.ftol and diam <= cfg.xtol:
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + REFLECT * (centroid - sim[-1])
        fr = _eval(f, xr)
        if fr < fs[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = _eval(f, xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + CONTRACT * (xr - centroid)  # outside contraction
            fc = _eval(f, xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + CONTRACT * (sim[-1] - centroid)  # inside contraction
            fc = _eval(f, xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        sim[1:] = sim[0] + SHRINK * (sim[1:] - sim[0])
        fs[1:] = [_eval(f, x) for x in sim[1:]]
    k = int(np.argmin(fs))
    return sim[k].copy(), float(fs[k]), converged, it


def nelder_mead(objective, start, cfg=None):
    """Simplex minimization with coefficients (1, 2, 0.5, 0.5)."""
    cfg = cfg or OptimizerConfig()
    x0 = np.atleast_1d(np.asarray(start, dtype=float)).ravel()
    if not math.isfinite(_eval(objective, x0)):
        raise NonFiniteObjective("objective is not finite at the start point")
    x, fx, conv, its = _nelder_mead_once(objective, x0, cfg, cfg.max_iterations)
    for _ in range(cfg.restarts):
        if its >= cfg.max_iterations:
            break
        x2, f2, conv, k = _nelder_mead_once(objective, x, cfg, cfg.max_iterations - its)
        its += k
        moved = np.max(np.abs(x2 - x)) if f2 <= fx else 0.0
        if f2 <= fx:
            x, fx = x2, f2
        if moved <= cfg.xtol:
            break
    return VarResult(x, fx, conv, x0, its)


def _multi(objective, starts, cfg, shape):
    results = []
    for s in starts:
        s = np.asarray(s, dtype=float)
        try:
            r = nelder_mead(objective, s.ravel(), cfg)
        except NonFiniteObjective:
            r = VarResult(s.ravel(), math.inf, False, s.ravel(), 0)
        r.minimizer = r.minimizer.reshape(shape)
        r.start = s.reshape(shape)
        results.append(r)
    results.sort(key=lambda r: r.value)
    if results and math.isfinite(results[0].value):
        results[0].best = True
    return results


def fourdvar(p, starts, cfg=None):
    """Minimize I_det over v_0 from each start; results sorted by objective."""
    cfg = cfg or OptimizerConfig()
    return _multi(lambda x: neg_log_posterior_det(p, x), starts, cfg, (p.n,))


def w4dvar(p, starts, cfg=None):
    """Minimize I over whole paths from each start."""
    cfg = cfg or OptimizerConfig(max_iterations=100000, restarts=50)
    shape = (p.J + 1, p.n)
    return _multi(lambda x: neg_log_posterior(p, x.reshape(shape)), starts, cfg, shape)


def double_well(u, eps):
    """V(u) = ¼(1 − u²)² + εu."""
    u = np.asarray(u, dtype=float)
    return 0.25 * (1.0 - u**2) ** 2 + eps * u
