import numpy as np
import pytest

from conftest import random_spd
from dasim.core import make_rng
from dasim.filters import (
    TwinSetup,
    etkf_step,
    exkf_step,
    enkf_po_step,
    kf_predict,
    kf_update_gain,
    kf_update_precision,
    optimal_proposal,
    resample_multinomial,
    run_filter,
    sirs_op_step,
    sirs_step,
    sync_filter_step,
    threedvar_gain,
    threedvar_step,
)
from dasim.models import Linear2D, LinearMap, LinearScalar, Observation, SinMap
from dasim.prob import WeightedSamples


def test_predict_identity():
    m, C = kf_predict([1.0, 2.0], np.eye(2), np.eye(2), 0.0)
    assert np.array_equal(m, [1.0, 2.0]) and np.array_equal(C, np.eye(2))


def test_predict_scalar():
    m, C = kf_predict([1.0], 1.0, 2.0, 3.0)
    assert m[0] == 2.0 and C[0, 0] == 7.0


def test_predict_matches_monte_carlo(rng):
    M = rng.standard_normal((2, 2))
    C, S = random_spd(rng, 2), random_spd(rng, 2)
    m = rng.standard_normal(2)
    mh, Ch = kf_predict(m, C, M, S)
    g = make_rng(3)
    x = m + g.standard_normal((10**5, 2)) @ np.linalg.cholesky(C).T
    z = x @ M.T + g.standard_normal((10**5, 2)) @ np.linalg.cholesky(S).T
    se = np.sqrt(np.diag(Ch) / 10**5)
    assert np.all(np.abs(z.mean(axis=0) - mh) < 3 * se)
    assert np.allclose(np.cov(z, rowvar=False), Ch, rtol=0.03, atol=0.03 * np.trace(Ch))


def test_uninformative_data():
    m, C = kf_update_precision([1.0, -1.0], np.diag([2.0, 3.0]), np.eye(2), 1e12, [5.0, 5.0])
    assert np.allclose(m, [1.0, -1.0], rtol=1e-6) and np.allclose(C, np.diag([2.0, 3.0]), rtol=1e-6)


def test_scalar_update_both_forms():
    m, C = kf_update_precision([0.0], 1.0, [[1.0]], 1.0, [2.0])
    assert m[0] == pytest.approx(1.0) and C[0, 0] == pytest.approx(0.5)
    m, C, K, d, S = kf_update_gain([0.0], 1.0, [[1.0]], 1.0, [2.0])
    assert K[0, 0] == pytest.approx(0.5) and m[0] == pytest.approx(1.0) and C[0, 0] == pytest.approx(0.5)
    assert d[0] == 2.0 and S[0, 0] == 2.0


def test_zero_observation_operator():
    mh, Ch = np.array([1.0, 2.0]), random_spd(make_rng(0), 2)
    m, C, K, _, _ = kf_update_gain(mh, Ch, np.zeros((1, 2)), 1.0, [3.0])
    assert np.all(K == 0) and np.array_equal(m, mh) and np.allclose(C, Ch)


def test_precision_and_gain_forms_agree():
    g = make_rng(4)
    for _ in range(100):
        n, k = g.integers(1, 7), g.integers(1, 4)
        Ch, G = random_spd(g, n), random_spd(g, k)
        H = g.standard_normal((k, n))
        mh, y = g.standard_normal(n), g.standard_normal(k)
        m1, C1 = kf_update_precision(mh, Ch, H, G, y)
        m2, C2, *_ = kf_update_gain(mh, Ch, H, G, y)
        assert np.linalg.norm(m1 - m2) < 1e-10 and np.linalg.norm(C1 - C2) < 1e-10


def p8_setup(J=200, seed=1):
    return TwinSetup(Linear2D(3), Observation.first_component(2), 1.0, 1.0, J, seed,
                     truth_init=("normal", 0.0, 1.0), filter_init=("normal", 0.0, 100.0), C0=100.0)


def test_kf_rotation_locks_on():
    run = run_filter(p8_setup(), "kf")
    assert run.trace_cov[-1] < run.trace_cov[0]
    e = run.error
    assert e[150:].mean() < e[1:50].mean()


def test_threedvar_zero_gain_is_forecast():
    m = threedvar_step([0.3], SinMap(2.5), np.eye(1), np.zeros((1, 1)), [5.0])
    assert m[0] == pytest.approx(2.5 * np.sin(0.3))


def test_threedvar_variance_inflation_form():
    sigma2, gamma2 = 0.7, 0.2
    K = threedvar_gain(sigma2 * np.eye(3), np.eye(3), gamma2 * np.eye(3))
    eta2 = gamma2 / sigma2
    assert np.allclose(np.eye(3) - K, eta2 / (1 + eta2) * np.eye(3))


def test_exkf_equals_kf_on_linear_model():
    setup = p8_setup(J=50)
    a, b = run_filter(setup, "kf"), run_filter(setup, "exkf")
    assert np.max(np.abs(a.mean - b.mean)) < 1e-12
    assert np.max(np.abs(a.cov - b.cov)) < 1e-12


def test_exkf_sin_linearization():
    m, C, sigma, gamma, y = 0.4, 0.3, 0.09, 1.0, 0.5
    D = 2.5 * np.cos(m)
    chat = D * C * D + sigma
    mhat = 2.5 * np.sin(m)
    k = chat / (chat + gamma)
    mn, Cn = exkf_step([m], [[C]], SinMap(2.5), np.eye(1), sigma, gamma, [y])
    assert mn[0] == pytest.approx(mhat + k * (y - mhat)) and Cn[0, 0] == pytest.approx((1 - k) * chat)


def test_enkf_huge_noise_keeps_forecast():
    ens = make_rng(5).standard_normal((50, 2))
    info = {}
    new = enkf_po_step(ens, LinearMap(np.eye(2) * 0.9), np.eye(2), 0.0, 1e14, [0.0, 0.0], make_rng(6), info=info)
    assert np.allclose(new, info["forecast"], atol=1e-5)


def test_enkf_collapsed_ensemble_unchanged():
    ens = np.tile([0.5, -0.5], (10, 1))
    new = enkf_po_step(ens, LinearMap(np.eye(2)), np.eye(2), 0.0, 1.0, [3.0, 3.0], make_rng(7))
    assert np.array_equal(new, ens)


def test_etkf_unobserved_deviations():
    g = make_rng(8)
    ens = np.column_stack([np.full(20, 0.7), g.standard_normal(20)])
    info = {}
    new = etkf_step(ens, LinearMap(np.eye(2)), np.array([[1.0, 0.0]]), 0.0, 1.0, [2.0], g, info=info)
    fc = info["forecast"]
    assert np.allclose(new - new.mean(axis=0), fc - fc.mean(axis=0), atol=1e-12)
    assert np.allclose(new.mean(axis=0), info["mean"], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_etkf_covariance_identity_and_mean(seed):
    g = make_rng(seed)
    n, k, N = 4, 2, 15
    ens = g.standard_normal((N, n))
    H = g.standard_normal((k, n))
    info = {}
    new = etkf_step(ens, LinearMap(0.9 * np.eye(n)), H, random_spd(g, n), random_spd(g, k), g.standard_normal(k), g,
                    info=info)
    X, K, Ch = info["X"], info["K"], info["Chat"]
    assert np.linalg.norm(X @ X.T - (np.eye(n) - K @ H) @ Ch) < 1e-10
    assert np.max(np.abs(new.mean(axis=0) - info["mean"])) < 1e-12


def test_resample_point_mass():
    ws = WeightedSamples([[0.0], [1.0], [2.0]], [0.0, 1.0, 0.0])
    assert np.all(resample_multinomial(ws, make_rng(0)).points == 1.0)


def test_resample_uniform_bootstrap():
    pts = np.arange(100.0)[:, None]
    counts = np.zeros(100)
    for s in range(200):
        out = resample_multinomial(WeightedSamples.uniform(pts), make_rng(s))
        counts += np.bincount(out.points[:, 0].astype(int), minlength=100)
        assert np.allclose(out.weights, 0.01)
    assert abs(counts.mean() / 200 - 1.0) < 1e-12
    assert np.all(np.abs(counts / 200 - 1.0) < 0.5)


def test_resample_two_points():
    out = resample_multinomial(WeightedSamples([[0.0], [1.0]] * 50000, np.full(100000, 1e-5)), make_rng(1))
    assert abs(out.points.mean() - 0.5) < 0.01


def test_sirs_without_information_keeps_uniform_weights():
    ws = WeightedSamples.uniform(make_rng(2).standard_normal((30, 1)))
    info = {}
    sirs_step(ws, SinMap(2.5), np.zeros((1, 1)), 0.5, 1.0, [0.3], make_rng(3), resample=False, info=info)
    assert np.allclose(info["weighted"].weights, 1 / 30)


def test_optimal_proposal_scalar():
    sig_p, wcov = optimal_proposal(SinMap(2.5), np.eye(1), 1.0, 1.0)
    assert sig_p[0, 0] == pytest.approx(0.5) and wcov[0, 0] == pytest.approx(2.0)
    pts = np.full((2000, 1), 0.4)
    out = sirs_op_step(WeightedSamples.uniform(pts), SinMap(2.5), np.eye(1), 1.0, 1.0, [1.0], make_rng(4),
                       resample=False)
    assert abs(out.points.mean() - (2.5 * np.sin(0.4) + 1.0) / 2) < 4 * np.sqrt(0.5 / 2000)


def linear_scalar_setup(J=100):
    return TwinSetup(LinearScalar(0.9), Observation.identity(1), 0.5, 0.5, J, 11,
                     truth_init=("fixed", 0.0), filter_init=("fixed", 0.0), C0=1.0)


@pytest.mark.parametrize("alg", ["sirs", "sirs_op"])
def test_particle_filters_approach_kalman(alg):
    setup = linear_scalar_setup()
    kf = run_filter(setup, "kf")
    pf = run_filter(setup, alg, N=10**4)
    diff = (pf.mean - kf.mean)[1:, 0]
    sd = np.sqrt(kf.cov[1:, 0, 0])
    assert np.sqrt(np.mean((diff / sd) ** 2)) < 5 / np.sqrt(10**4)


def test_optimal_proposal_reduces_weight_variance():
    model, H = SinMap(2.5), np.eye(1)
    wins = 0
    for rep in range(100):
        g = make_rng(rep)
        pts = g.standard_normal((100, 1))
        y = [model.apply(g.standard_normal(1))[0] + 0.3 * g.standard_normal()]
        a, b = {}, {}
        sirs_step(WeightedSamples.uniform(pts), model, H, 1.0, 0.09, y, make_rng(rep, 1), resample=False, info=a)
        sirs_op_step(WeightedSamples.uniform(pts), model, H, 1.0, 0.09, y, make_rng(rep, 1), resample=False, info=b)
        wins += np.var(b["weighted"].weights) <= np.var(a["weighted"].weights)
    assert wins >= 95


def test_sync_projection_limits():
    m = np.array([0.3, -0.2])
    model = LinearMap([[0.5, 1.0], [-1.0, 0.3]])
    assert np.allclose(sync_filter_step(m, model, np.eye(2), [1.0, 2.0]), [1.0, 2.0])
    assert np.allclose(sync_filter_step(m, model, np.zeros((2, 2)), [1.0, 2.0]), model.apply(m))


def test_zero_gain_perfect_start_has_zero_error():
    setup = TwinSetup(SinMap(2.5), Observation.identity(1), None, 1.0, 50, 3,
                      truth_init=("fixed", 0.7), filter_init=("fixed", 0.7))
    run = run_filter(setup, "3dvar", chat=0.0)
    assert np.all(run.error == 0.0)


def test_scalar_kf_unstable_dynamics_limit():
    setup = TwinSetup(LinearScalar(2.0), Observation.identity(1), None, 1.0, 200, 0, C0=1.0)
    run = run_filter(setup, "kf")
    assert abs(run.cov[-1, 0, 0] - 0.75) < 1e-10


def test_scalar_kf_neutral_dynamics_algebraic_decay():
    setup = TwinSetup(LinearScalar(1.0), Observation.identity(1), None, 0.5, 100, 0, C0=2.0)
    c = run_filter(setup, "kf").cov[:, 0, 0]
    j = np.arange(101)
    assert np.max(np.abs(1 / c - (0.5 + j / 0.5))) < 1e-12 * 200


def test_blowup_is_reported():
    setup = TwinSetup(LinearScalar(10.0), Observation.identity(1), None, 1.0, 50, 0,
                      truth_init=("fixed", 0.0), filter_init=("fixed", 1.0))
    run = run_filter(setup, "3dvar", chat=0.0, blowup_bound=1e6)
    assert run.blowup_step == 7 and run.steps == 6
