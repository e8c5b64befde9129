"""Sequential filters: Kalman, 3DVAR, ExKF, EnKF, ETKF, particle filters and synchronization."""

from dataclasses import dataclass, field

import numpy as np

from .core import (
    STREAM_FILTER_INIT,
    STREAM_MODEL_NOISE,
    STREAM_OBS_NOISE,
    STREAM_PERTURB,
    STREAM_PROPOSAL,
    STREAM_RESAMPLE,
    STREAM_TRUTH_INIT,
    DimensionMismatch,
    NonFiniteState,
    NotPositiveSemiDefinite,
    ZeroWeightSum,
    as_matrix,
    as_vector,
    cholesky_factor,
    make_rng,
    spd_inverse,
    symmetrize,
)
from .models import generate_data, simulate
from .prob import WeightedSamples


def _h(H):
    return np.atleast_2d(np.asarray(getattr(H, "H", H), dtype=float))


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"{what} became non-finite")
    return x


def kf_predict(m, C, M, sigma):
    m = as_vector(m)
    n = m.shape[0]
    M = as_matrix(M, n) if np.ndim(M) < 2 else np.asarray(M, dtype=float)
    if M.shape != (n, n):
        raise DimensionMismatch("model matrix does not match the mean")
    C = as_matrix(C, n)
    return M @ m, symmetrize(M @ C @ M.T + as_matrix(sigma, n))


def kf_update_precision(mhat, Chat, H, gamma, y):
    H = _h(H)
    mhat = as_vector(mhat, H.shape[1])
    gi = spd_inverse(as_matrix(gamma, H.shape[0]))
    prec = spd_inverse(Chat) + H.T @ gi @ H
    C = spd_inverse(prec)
    m = C @ (spd_inverse(Chat) @ mhat + H.T @ gi @ as_vector(y, H.shape[0]))
    return m, C


def kf_update_gain(mhat, Chat, H, gamma, y):
    """Innovation form; the only inversion happens in data space."""
    H = _h(H)
    mhat = as_vector(mhat, H.shape[1])
    Chat = as_matrix(Chat, H.shape[1])
    d = as_vector(y, H.shape[0]) - H @ mhat
    S = symmetrize(H @ Chat @ H.T + as_matrix(gamma, H.shape[0]))
    K = np.linalg.solve(S, H @ Chat).T
    m = mhat + K @ d
    C = symmetrize((np.eye(H.shape[1]) - K @ H) @ Chat)
    return m, C, K, d, S


def threedvar_gain(chat, H, gamma):
    H = _h(H)
    chat = as_matrix(chat, H.shape[1])
    S = H @ chat @ H.T + as_matrix(gamma, H.shape[0])
    return np.linalg.solve(S, H @ chat).T


def threedvar_step(m, model, H, K, y):
    H = _h(H)
    pred = model.apply(m)
    return _finite(pred + K @ (as_vector(y, H.shape[0]) - H @ pred), "3DVAR mean")


def exkf_step(m, C, model, H, sigma, gamma, y):
    m = as_vector(m, model.dim)
    D = model.jacobian(m)
    mhat = _finite(model.apply(m), "ExKF forecast")
    Chat = symmetrize(D @ as_matrix(C, model.dim) @ D.T + as_matrix(sigma, model.dim))
    mnew, Cnew, *_ = kf_update_gain(mhat, Chat, H, gamma, y)
    return _finite(mnew, "ExKF mean"), Cnew


def _propagate(ens, model, sigma, rng, model_noise):
    pred = model.apply(ens)
    if model_noise and sigma is not None and np.any(sigma):
        L = cholesky_factor(as_matrix(sigma, model.dim))
        pred = pred + rng.standard_normal(pred.shape) @ L.T
    return _finite(pred, "ensemble forecast")


def sample_cov(ens):
    d = ens - ens.mean(axis=0)
    return d.T @ d / (ens.shape[0] - 1)


def enkf_po_step(ens, model, H, sigma, gamma, y, rng, model_noise=True, sample_gamma=False,
                 perturb_rng=None, info=None):
    """Perturbed-observation EnKF. `info` (a dict) receives the forecast and gain.

    Observation perturbations come from `perturb_rng` when given, else from `rng`.
    """
    H = _h(H)
    ens = np.atleast_2d(np.asarray(ens, dtype=float))
    N = ens.shape[0]
    if N < 2:
        raise ValueError("EnKF needs at least two members")
    G = as_matrix(gamma, H.shape[0])
    pred = _propagate(ens, model, sigma, rng, model_noise)
    Chat = sample_cov(pred)
    prng = rng if perturb_rng is None else perturb_rng
    eta = prng.standard_normal((N, H.shape[0])) @ cholesky_factor(G).T
    Guse = np.atleast_2d(np.cov(eta, rowvar=False)) if sample_gamma else G
    S = symmetrize(H @ Chat @ H.T + Guse)
    K = np.linalg.solve(S, H @ Chat).T
    yp = as_vector(y, H.shape[0]) + eta
    new = pred + (yp - pred @ H.T) @ K.T
    if info is not None:
        info.update(forecast=pred, Chat=Chat, K=K)
    return new


def etkf_step(ens, model, H, sigma, gamma, y, rng, model_noise=True, info=None):
    """Square-root update X = X̂ T^{1/2} with T = [I + (HX̂)ᵀΓ⁻¹(HX̂)]⁻¹."""
    H = _h(H)
    ens = np.atleast_2d(np.asarray(ens, dtype=float))
    N = ens.shape[0]
    if N < 2:
        raise ValueError("ETKF needs at least two members")
    pred = _propagate(ens, model, sigma, rng, model_noise)
    mhat = pred.mean(axis=0)
    Xhat = (pred - mhat).T / np.sqrt(N - 1)  # n x N
    Chat = Xhat @ Xhat.T
    gi = spd_inverse(as_matrix(gamma, H.shape[0]))
    HX = H @ Xhat
    T = spd_inverse(np.eye(N) + HX.T @ gi @ HX)
    w, V = np.linalg.eigh(symmetrize(T))
    if w[0] <= 0:
        raise NotPositiveSemiDefinite("transform matrix lost positivity")
    Tsqrt = (V * np.sqrt(w)) @ V.T
    X = Xhat @ Tsqrt
    m, _, K, _, _ = kf_update_gain(mhat, Chat, H, gamma, y)
    new = m + np.sqrt(N - 1) * X.T
    if info is not None:
        info.update(forecast=pred, Chat=Chat, K=K, X=X, mean=m)
    return new


def resample_multinomial(ws, rng):
    """Multinomial resampling; particle n* is the first index whose CDF exceeds u."""
    cdf = np.cumsum(ws.weights)
    cdf[-1] = max(cdf[-1], 1.0)
    u = rng.random(len(ws))
    idx = np.searchsorted(cdf, u, side="right")
    return WeightedSamples.uniform(ws.points[idx])


def _normalize_log(logw):
    if not np.any(np.isfinite(logw)):
        raise ZeroWeightSum("all particle likelihoods vanished")
    w = np.exp(logw - np.max(logw))
    s = w.sum()
    if not s > 0:
        raise ZeroWeightSum("particle weights sum to zero")
    w = w / s
    return w / w.sum()


def _loglik(resid, cov_inv):
    return -0.5 * np.einsum("ij,jk,ik->i", resid, cov_inv, resid)


def sirs_step(ws, model, H, sigma, gamma, y, rng, resample=True, info=None):
    """Bootstrap filter: propagate with noise, weight by the likelihood, resample."""
    H = _h(H)
    pred = _propagate(ws.points, model, sigma, rng, True)
    gi = spd_inverse(as_matrix(gamma, H.shape[0]))
    logw = np.log(ws.weights) + _loglik(as_vector(y, H.shape[0]) - pred @ H.T, gi)
    weighted = WeightedSamples(pred, _normalize_log(logw))
    if info is not None:
        info.update(weighted=weighted)
    return resample_multinomial(weighted, rng) if resample else weighted


def optimal_proposal(model, H, sigma, gamma):
    """Σ' = (Σ⁻¹ + HᵀΓ⁻¹H)⁻¹ and the weight covariance Γ + HΣHᵀ."""
    H = _h(H)
    S = as_matrix(sigma, model.dim)
    G = as_matrix(gamma, H.shape[0])
    gi = spd_inverse(G)
    sig_p = spd_inverse(spd_inverse(S) + H.T @ gi @ H)
    return sig_p, symmetrize(G + H @ S @ H.T)


def sirs_op_step(ws, model, H, sigma, gamma, y, rng, resample=True, info=None):
    """Particle filter with the optimal proposal; Σ = 0 falls back to the bootstrap filter."""
    if sigma is None or not np.any(sigma):
        return sirs_step(ws, model, H, sigma, gamma, y, rng, resample, info)
    H = _h(H)
    y = as_vector(y, H.shape[0])
    S = as_matrix(sigma, model.dim)
    sig_p, wcov = optimal_proposal(model, H, S, gamma)
    gi = spd_inverse(as_matrix(gamma, H.shape[0]))
    psi = _finite(model.apply(ws.points), "particle forecast")
    means = (psi @ spd_inverse(S).T + (H.T @ gi @ y)[None, :]) @ sig_p.T
    logw = np.log(ws.weights) + _loglik(y - psi @ H.T, spd_inverse(wcov))
    pts = means + rng.standard_normal(means.shape) @ cholesky_factor(sig_p).T
    weighted = WeightedSamples(pts, _normalize_log(logw))
    if info is not None:
        info.update(weighted=weighted)
    return resample_multinomial(weighted, rng) if resample else weighted


def sync_filter_step(m, model, P, y):
    """m' = QΨ(m) + P y with Q = I - P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = model.dim
    if P.shape != (n, n):
        raise DimensionMismatch("projection must be n x n")
    y = as_vector(y, n)
    return (np.eye(n) - P) @ model.apply(as_vector(m, n)) + P @ y


# --- twin experiments -------------------------------------------------------

ALGORITHMS = ("kf", "3dvar", "exkf", "enkf", "etkf", "sirs", "sirs_op", "sync")
ENSEMBLE_ALGORITHMS = ("enkf", "etkf", "sirs", "sirs_op")


@dataclass
class TwinSetup:
    """Truth and data generation plus the filter's prior.

    init specs are ("fixed", v), ("normal", mean, cov) or ("uniform", lo, hi).
    """

    model: object
    obs: object
    sigma: object
    gamma: object
    J: int
    seed: int
    truth_init: tuple = ("fixed", 0.0)
    filter_init: tuple = ("fixed", 0.0)
    C0: object = 1.0

    def __post_init__(self):
        n = self.model.dim
        self.sigma = None if self.sigma is None else as_matrix(self.sigma, n)
        if self.sigma is not None and not np.any(self.sigma):
            self.sigma = None
        self.gamma = as_matrix(self.gamma, self.obs.obs_dim)
        self.C0 = as_matrix(self.C0, n)
        self.J = int(self.J)


def draw_init(spec, n, rng):
    kind = spec[0]
    if kind == "fixed":
        return as_vector(np.broadcast_to(np.asarray(spec[1], dtype=float), (n,)).copy(), n)
    if kind == "normal":
        mean = np.broadcast_to(np.asarray(spec[1], dtype=float), (n,))
        cov = as_matrix(spec[2], n)
        return mean + cholesky_factor(cov) @ rng.standard_normal(n)
    if kind == "uniform":
        return rng.uniform(spec[1], spec[2], size=n)
    raise ValueError(f"unknown initialization {kind!r}")


def make_truth_and_data(setup):
    n = setup.model.dim
    v0 = draw_init(setup.truth_init, n, make_rng(setup.seed, STREAM_TRUTH_INIT))
    truth = simulate(setup.model, v0, setup.J, setup.sigma, make_rng(setup.seed, STREAM_MODEL_NOISE))
    y = generate_data(truth, setup.obs, setup.gamma, make_rng(setup.seed, STREAM_OBS_NOISE))
    return truth, y


@dataclass
class FilterRun:
    algorithm: str
    truth: np.ndarray
    y: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    steps: int
    blowup_step: int = None
    forecasts: list = field(default_factory=list)

    @property
    def error(self):
        k = self.steps + 1
        return np.linalg.norm(self.mean[:k] - self.truth[:k], axis=1)

    @property
    def trace_cov(self):
        return np.trace(self.cov[: self.steps + 1], axis1=1, axis2=2)


def threedvar_chat(setup, eta=None, chat=None):
    """Fixed forecast covariance: explicit, or γ²/η² I with γ² the mean observation variance."""
    if chat is not None:
        return as_matrix(chat, setup.model.dim)
    g2 = float(np.trace(setup.gamma)) / setup.gamma.shape[0]
    return (g2 / float(eta) ** 2) * np.eye(setup.model.dim)


def run_filter(setup, algorithm, N=100, eta=0.2, chat=None, model_noise=True,
               blowup_bound=1e8, keep_forecasts=False, data=None):
    """Twin experiment: simulate truth, generate data, assimilate y_1..y_J in turn."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    model, H = setup.model, setup.obs.H
    n, J = model.dim, setup.J
    truth, y = make_truth_and_data(setup) if data is None else data
    init_rng = make_rng(setup.seed, STREAM_FILTER_INIT)
    noise_rng = make_rng(setup.seed, STREAM_PROPOSAL)
    pert_rng = make_rng(setup.seed, STREAM_PERTURB)
    res_rng = make_rng(setup.seed, STREAM_RESAMPLE)
    m = draw_init(setup.filter_init, n, init_rng)
    C = setup.C0.copy()
    mean = np.full((J + 1, n), np.nan)
    cov = np.full((J + 1, n, n), np.nan)
    mean[0], cov[0] = m, C
    ens = None
    if algorithm in ENSEMBLE_ALGORITHMS:
        ens = m + init_rng.standard_normal((int(N), n)) @ cholesky_factor(C).T
        cov[0] = sample_cov(ens)
    K3 = None
    if algorithm == "3dvar":
        chat_m = threedvar_chat(setup, eta, chat)
        K3 = threedvar_gain(chat_m, H, setup.gamma)
        C = symmetrize((np.eye(n) - K3 @ H) @ chat_m)
    if algorithm == "sync":
        P = H.T @ H
    if algorithm == "kf" and model.matrix is None:
        raise ValueError("the Kalman filter needs a linear model; use exkf")
    sigma = setup.sigma if setup.sigma is not None else np.zeros((n, n))
    forecasts = []
    blowup = None
    steps = 0
    for j in range(J):
        yj = y[j]
        info = {} if keep_forecasts else None
        try:
            if algorithm == "kf":
                mh, Ch = kf_predict(m, C, model.matrix, sigma)
                m, C, *_ = kf_update_gain(mh, Ch, H, setup.gamma, yj)
            elif algorithm == "3dvar":
                m = threedvar_step(m, model, H, K3, yj)
            elif algorithm == "exkf":
                m, C = exkf_step(m, C, model, H, sigma, setup.gamma, yj)
            elif algorithm == "enkf":
                ens = enkf_po_step(ens, model, H, sigma, setup.gamma, yj, noise_rng, model_noise,
                                   perturb_rng=pert_rng, info=info)
                m, C = ens.mean(axis=0), sample_cov(ens)
            elif algorithm == "etkf":
                ens = etkf_step(ens, model, H, sigma, setup.gamma, yj, noise_rng, model_noise, info=info)
                m, C = ens.mean(axis=0), sample_cov(ens)
            elif algorithm in ("sirs", "sirs_op"):
                step = sirs_step if algorithm == "sirs" else sirs_op_step
                inner = {}
                ws = step(WeightedSamples.uniform(ens), model, H, sigma, setup.gamma, yj, noise_rng,
                          resample=False, info=inner)
                wtd = inner["weighted"]
                m, C = wtd.mean(), wtd.cov()
                ens = resample_multinomial(ws, res_rng).points
                if info is not None:
                    info["forecast"] = wtd.points
            else:
                m = sync_filter_step(m, model, P, H.T @ yj)
            if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > blowup_bound:
                raise NonFiniteState("filter mean left the admissible range")
        except NonFiniteState:
            blowup = j + 1
            break
        mean[j + 1], cov[j + 1] = m, C
        steps = j + 1
        if keep_forecasts:
            forecasts.append(info.get("forecast"))
    return FilterRun(algorithm, truth, y, mean, cov, steps, blowup, forecasts)
