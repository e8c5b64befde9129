import math

import numpy as np
import pytest

from conftest import random_spd
from dasim.core import ZeroModelNoise, make_rng
from dasim.models import LinearMap, LinearScalar, LogisticMap, Observation, SinMap, simulate
from dasim.smoothing import (
    SmoothingProblem,
    background_j,
    background_j_noise,
    block_tridiagonal_solve,
    grid_posterior_1d,
    kalman_smoother,
    kalman_smoother_det,
    logistic_grid,
    misfit_phi,
    misfit_phi_noise,
    neg_log_posterior,
    neg_log_posterior_det,
    neg_log_posterior_noise,
    noise_to_signal,
    orbit,
    signal_to_noise,
)


def scalar_problem(lam=0.5, sigma=1.0, gamma=1.0, m0=0.0, c0=1.0, y=(1.0,)):
    return SmoothingProblem(LinearScalar(lam), Observation.identity(1), sigma, gamma, m0, c0, np.array(y))


def random_linear_problem(seed, n=2, m=1, J=4, stochastic=True):
    rng = make_rng(seed)
    M = 0.8 * rng.standard_normal((n, n))
    H = rng.standard_normal((m, n))
    return SmoothingProblem(
        LinearMap(M), Observation(H), random_spd(rng, n) if stochastic else None, random_spd(rng, m),
        rng.standard_normal(n), random_spd(rng, n), rng.standard_normal((J, m)),
    )


def dense_oracle(p):
    """Posterior precision and mean from the stacked residual operator."""
    n, J = p.n, p.J
    M, H = p.model.matrix, p.obs.H
    rows, rhs, weights = [], [], []

    def block(j, mat):
        a = np.zeros((mat.shape[0], (J + 1) * n))
        a[:, j * n:(j + 1) * n] = mat
        return a

    rows.append(block(0, np.eye(n)))
    rhs.append(p.m0)
    weights.append(p.C0_inv)
    for j in range(J):
        rows.append(block(j + 1, np.eye(n)) - block(j, M))
        rhs.append(np.zeros(n))
        weights.append(p.sigma_inv)
        rows.append(block(j + 1, H))
        rhs.append(p.y[j])
        weights.append(p.gamma_inv)
    prec = sum(a.T @ w @ a for a, w in zip(rows, weights))
    lin = sum(a.T @ w @ b for a, w, b in zip(rows, weights, rhs))
    return prec, np.linalg.solve(prec, lin)


def test_misfit_perfect_fit():
    p = scalar_problem(y=[0.5, 0.25])
    assert misfit_phi(p, [1.0, 0.5, 0.25]) == 0.0


def test_misfit_single_term():
    assert misfit_phi(scalar_problem(), [0.0, 0.0]) == pytest.approx(0.5)


def test_misfit_term_by_term():
    p = random_linear_problem(1, n=3, m=2, J=5)
    v = make_rng(2).standard_normal((6, 3))
    ref = sum(0.5 * (p.y[j] - p.obs.H @ v[j + 1]) @ p.gamma_inv @ (p.y[j] - p.obs.H @ v[j + 1]) for j in range(5))
    assert misfit_phi(p, v) == pytest.approx(ref, rel=1e-12)


def test_background_zero_and_scalar():
    p = scalar_problem(lam=0.5, m0=2.0)
    assert background_j(p, [2.0, 1.0]) == 0.0
    q = scalar_problem(lam=1.0, m0=0.0)
    assert background_j(q, [1.0, 1.0]) == pytest.approx(0.5)


def test_background_term_by_term():
    p = random_linear_problem(3, n=2, m=1, J=4)
    v = make_rng(4).standard_normal((5, 2))
    M = p.model.matrix
    ref = 0.5 * (v[0] - p.m0) @ p.C0_inv @ (v[0] - p.m0)
    ref += sum(0.5 * (v[j + 1] - M @ v[j]) @ p.sigma_inv @ (v[j + 1] - M @ v[j]) for j in range(4))
    assert background_j(p, v) == pytest.approx(ref, rel=1e-12)


def test_neg_log_posterior_additivity():
    p = scalar_problem(lam=1.0, m0=0.0, y=[2.0])
    v = [1.0, 1.0]
    assert neg_log_posterior(p, v) == pytest.approx(background_j(p, v) + misfit_phi(p, v))


def test_neg_log_posterior_is_smoother_quadratic():
    p = random_linear_problem(5, n=2, m=1, J=6)
    mean, L, _ = kalman_smoother(p)
    dense = L.dense()
    rng = make_rng(6)
    consts = []
    for _ in range(5):
        v = mean + rng.standard_normal(mean.shape)
        d = (v - mean).ravel()
        consts.append(neg_log_posterior(p, v) - 0.5 * d @ dense @ d)
    assert np.ptp(consts) < 1e-9


def test_det_potential_at_truth_without_noise():
    model = LogisticMap(4.0)
    truth = simulate(model, [0.3], 5)
    p = SmoothingProblem(model, Observation.identity(1), None, 0.04, 0.5, 0.01, truth[1:])
    assert neg_log_posterior_det(p, [0.3]) == pytest.approx(0.5 * (0.3 - 0.5) ** 2 / 0.01)


def test_det_potential_compositional_oracle():
    model = LogisticMap(4.0)
    rng = make_rng(8)
    y = rng.random((7, 1))
    p = SmoothingProblem(model, Observation.identity(1), None, 0.04, 0.5, 0.01, y)
    for x in rng.random(5):
        path = simulate(model, [x], 7)
        ref = 0.5 * (x - 0.5) ** 2 / 0.01 + 0.5 * np.sum((y - path[1:]) ** 2) / 0.04
        assert abs(neg_log_posterior_det(p, [x]) - ref) < 1e-12 * max(1.0, ref)


def test_det_float_path_matches_array_path():
    y = make_rng(9).standard_normal((6, 1))
    fast = SmoothingProblem(LinearScalar(0.9), Observation.identity(1), None, 0.3, 0.2, 2.0, y)
    slow = SmoothingProblem(LinearMap([[0.9]]), Observation.identity(1), None, 0.3, 0.2, 2.0, y)
    assert fast._scalar is not None and slow._scalar is None
    for x in (-3.0, 0.0, 1.7):
        assert neg_log_posterior_det(fast, [x]) == pytest.approx(neg_log_posterior_det(slow, [x]), rel=1e-13)


def closed_form_posterior(lam, gamma2, m0, c0, y):
    J = len(y)
    prec = (lam**2 - lam ** (2 * J + 2)) / (gamma2 * (1 - lam**2)) + 1 / c0
    lin = m0 / c0 + sum(lam ** (j + 1) * y[j] for j in range(J)) / gamma2
    return lin / prec, 1 / prec


def test_smoother_det_closed_form():
    y = [1.0, 0.2, -0.4, 0.3]
    p = SmoothingProblem(LinearScalar(0.7), Observation.identity(1), None, 0.5, 0.3, 2.0, np.array(y))
    g = kalman_smoother_det(p)
    mean, var = closed_form_posterior(0.7, 0.5, 0.3, 2.0, y)
    assert g.mean[0] == pytest.approx(mean, rel=1e-12)
    assert g.cov[0, 0] == pytest.approx(var, rel=1e-12)


def test_smoother_det_prior_only():
    p = SmoothingProblem(LinearScalar(0.7), Observation.identity(1), None, 0.5, 0.3, 2.0, np.empty((0, 1)))
    g = kalman_smoother_det(p)
    assert g.mean[0] == pytest.approx(0.3) and g.cov[0, 0] == pytest.approx(2.0)


def test_smoother_det_gradient_vanishes():
    p = random_linear_problem(10, n=2, m=1, J=5, stochastic=False)
    m = kalman_smoother_det(p).mean
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        grad = (neg_log_posterior_det(p, m + e) - neg_log_posterior_det(p, m - e)) / (2 * h)
        assert abs(grad) < 1e-6


def test_noise_signal_round_trip():
    p = SmoothingProblem(SinMap(2.5), Observation.identity(1), 1.0, 1.0, 0.0, 1.0, np.zeros((10, 1)))
    v = make_rng(11).standard_normal((11, 1))
    assert np.max(np.abs(noise_to_signal(p, signal_to_noise(p, v)) - v)) < 1e-14


def test_noise_map_identity_when_dynamics_vanish():
    p = scalar_problem(lam=0.0, y=[0.0, 0.0, 0.0])
    xi = make_rng(12).standard_normal((4, 1))
    assert np.array_equal(noise_to_signal(p, xi), xi)


def test_zero_noise_gives_orbit():
    p = SmoothingProblem(SinMap(2.5), Observation.identity(1), 1.0, 1.0, 0.4, 1.0, np.zeros((6, 1)))
    xi = np.zeros((7, 1))
    xi[0] = p.m0
    assert np.allclose(noise_to_signal(p, xi), orbit(p, p.m0))


def test_noise_potential_relations():
    p = SmoothingProblem(SinMap(2.5), Observation.identity(1), 0.5, 0.3, 0.1, 2.0,
                         make_rng(13).standard_normal((5, 1)))
    xi = make_rng(14).standard_normal((6, 1))
    assert abs(misfit_phi_noise(p, xi) - misfit_phi(p, noise_to_signal(p, xi))) < 1e-12
    ref = 0.5 * (xi[0, 0] - 0.1) ** 2 / 2.0 + 0.5 * np.sum(xi[1:] ** 2) / 0.5
    assert background_j_noise(p, xi) == pytest.approx(ref, rel=1e-12)
    assert neg_log_posterior_noise(p, xi) == pytest.approx(ref + misfit_phi_noise(p, xi), rel=1e-12)


def test_noise_potential_zero_at_perfect_data():
    p = SmoothingProblem(SinMap(2.5), Observation.identity(1), 0.5, 0.3, 0.1, 2.0, np.zeros((4, 1)))
    xi = np.zeros((5, 1))
    xi[0] = 0.1
    p = p.with_data(noise_to_signal(p, xi)[1:])
    assert neg_log_posterior_noise(p, xi) == 0.0


def test_stochastic_operations_need_noise():
    p = SmoothingProblem(SinMap(2.5), Observation.identity(1), 0.0, 1.0, 0.0, 1.0, np.zeros((3, 1)))
    with pytest.raises(ZeroModelNoise):
        background_j(p, np.zeros(4))


def test_grid_posterior_flat():
    p = SmoothingProblem(LinearScalar(0.5), Observation.identity(1), None, 1.0, 0.0, 1e14, np.empty((0, 1)))
    grid = np.linspace(-1, 1, 201)
    post = grid_posterior_1d(p, grid)
    assert np.max(np.abs(post.values - 0.5)) < 1e-10


def test_grid_posterior_linear_closed_form():
    y = [2.0, 0.5, 0.9]
    p = SmoothingProblem(LinearScalar(0.5), Observation.identity(1), None, 1.0, 4.0, 5.0, np.array(y))
    mean, var = closed_form_posterior(0.5, 1.0, 4.0, 5.0, y)
    grid = np.linspace(mean - 12 * math.sqrt(var), mean + 12 * math.sqrt(var), 20001)
    post = grid_posterior_1d(p, grid)
    exact = np.exp(-0.5 * (grid - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)
    assert np.max(np.abs(post.values - exact)) < 1e-6


def test_grid_posterior_logistic_r2_bimodal():
    model = LogisticMap(2.0)
    truth = simulate(model, [0.1], 10)
    y = truth[1:] + 0.1 * make_rng(15).standard_normal((10, 1))
    p = SmoothingProblem(model, Observation.identity(1), None, 0.01, 0.4, 0.5, y)
    post = grid_posterior_1d(p, logistic_grid())
    g, v = post.grid, post.values
    left, right = g[np.argmax(np.where(g < 0.5, v, 0))], g[np.argmax(np.where(g > 0.5, v, 0))]
    assert abs(left - 0.1) < 0.05 and abs(right - 0.9) < 0.05


def test_logistic_grid_shape():
    g = logistic_grid()
    assert g.size == 1961 and g[0] == 0.01 and g[-1] == 0.99


def test_smoother_prior_only():
    p = scalar_problem(m0=1.5, c0=2.0, y=np.empty((0, 1)))
    mean, L, cov = kalman_smoother(p)
    assert mean[0, 0] == pytest.approx(1.5) and L.dense()[0, 0] == pytest.approx(0.5)
    assert cov[0, 0] == pytest.approx(2.0)


def test_smoother_hand_example():
    p = scalar_problem(lam=1.0, sigma=1.0, gamma=1.0, m0=0.0, c0=1.0, y=[2.0])
    mean, L, _ = kalman_smoother(p)
    assert np.allclose(L.dense(), [[2, -1], [-1, 2]])
    assert np.allclose(mean[:, 0], [2 / 3, 4 / 3])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_smoother_matches_dense_oracle(seed):
    p = random_linear_problem(seed, n=3, m=2, J=7)
    mean, L, cov = kalman_smoother(p)
    prec, ref = dense_oracle(p)
    assert np.allclose(L.dense(), prec, atol=1e-10)
    assert np.allclose(mean.ravel(), ref, atol=1e-9)
    assert np.allclose(cov, np.linalg.inv(prec)[-3:, -3:], atol=1e-9)


def test_smoother_precision_is_hessian():
    p = random_linear_problem(20, n=2, m=1, J=3)
    mean, L, _ = kalman_smoother(p)
    x0 = mean.ravel()
    h = 1e-5
    d = x0.size
    hess = np.empty((d, d))
    f = lambda x: neg_log_posterior(p, x.reshape(mean.shape))
    for i in range(d):
        for k in range(d):
            ei, ek = np.eye(d)[i] * h, np.eye(d)[k] * h
            hess[i, k] = (f(x0 + ei + ek) - f(x0 + ei - ek) - f(x0 - ei + ek) + f(x0 - ei - ek)) / (4 * h * h)
    assert np.max(np.abs(hess - L.dense())) < 1e-4


def test_block_solve_matches_dense(rng):
    p = random_linear_problem(30, n=2, m=2, J=5)
    _, L, _ = kalman_smoother(p)
    r = rng.standard_normal((6, 2))
    x, _ = block_tridiagonal_solve(L, r)
    assert np.allclose(x.ravel(), np.linalg.solve(L.dense(), r.ravel()), atol=1e-10)
