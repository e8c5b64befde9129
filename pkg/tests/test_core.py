import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_spd
from dasim.core import (
    DimensionMismatch,
    GaussianState,
    NotPositiveSemiDefinite,
    as_matrix,
    cholesky_factor,
    make_rng,
    sample_gaussian,
    spd_inverse,
    sqrtm_psd,
    woodbury_inverse,
)


def test_cholesky_identity():
    assert np.array_equal(cholesky_factor(np.eye(3)), np.eye(3))


def test_cholesky_diagonal():
    assert np.allclose(cholesky_factor([[4, 0], [0, 9]]), [[2, 0], [0, 3]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_cholesky_reconstructs_random_spd(n, seed):
    a = random_spd(np.random.default_rng(seed), n)
    L = cholesky_factor(a)
    assert np.allclose(L, np.tril(L))
    assert np.linalg.norm(L @ L.T - a) / np.linalg.norm(a) < 1e-10


def test_cholesky_singular_psd_is_lower_triangular():
    v = np.array([[1.0], [2.0], [-1.0]])
    a = v @ v.T
    L = cholesky_factor(a)
    assert np.allclose(L, np.tril(L))
    assert np.allclose(L @ L.T, a, atol=1e-12)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveSemiDefinite):
        cholesky_factor([[1.0, 0.0], [0.0, -1.0]])


def test_cholesky_symmetrizes_input():
    a = np.array([[2.0, 1.0 + 1e-12], [1.0, 2.0]])
    L = cholesky_factor(a)
    assert np.allclose(L @ L.T, 0.5 * (a + a.T), atol=1e-14)


def test_sqrtm_psd_squares_back(rng):
    a = random_spd(rng, 4)
    s = sqrtm_psd(a)
    assert np.allclose(s, s.T)
    assert np.allclose(s @ s, a, atol=1e-10)


def test_spd_inverse_matches_dense(rng):
    a = random_spd(rng, 5)
    assert np.allclose(spd_inverse(a), np.linalg.inv(a), atol=1e-10)


def test_sample_gaussian_dirac():
    g = GaussianState([1.0, -2.0], np.zeros((2, 2)))
    assert np.array_equal(sample_gaussian(g, make_rng(0)), [1.0, -2.0])


def test_sample_gaussian_standard_mean():
    n = 3
    x = sample_gaussian(GaussianState(np.zeros(n), np.eye(n)), make_rng(1), size=10**5)
    assert np.linalg.norm(x.mean(axis=0)) < 4 / np.sqrt(1e5) * np.sqrt(n)


def test_sample_gaussian_scalar_variance():
    x = sample_gaussian(GaussianState([1.0], [[4.0]]), make_rng(2), size=10**5)
    assert abs(x.var(ddof=1) - 4.0) < 0.4


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, 1).standard_normal(5)
    assert np.array_equal(a, make_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 2).standard_normal(5))


def test_woodbury_no_update():
    assert np.allclose(woodbury_inverse(np.eye(3), np.zeros((3, 2)), np.eye(2), np.zeros((2, 3))), np.eye(3))


def test_woodbury_scalar():
    assert woodbury_inverse(1.0, 1.0, 1.0, 1.0)[0, 0] == pytest.approx(0.5)


def test_woodbury_matches_dense_inverse(rng):
    a = random_spd(rng, 4)
    u = rng.standard_normal((4, 2))
    c = random_spd(rng, 2)
    expected = np.linalg.inv(a + u @ c @ u.T)
    assert np.allclose(woodbury_inverse(a, u, c, u.T), expected, atol=1e-10)


def test_woodbury_shape_check():
    with pytest.raises(DimensionMismatch):
        woodbury_inverse(np.eye(3), np.zeros((2, 2)), np.eye(2), np.zeros((2, 3)))


def test_as_matrix_promotes():
    assert np.array_equal(as_matrix(2.0, 2), 2 * np.eye(2))
    assert np.array_equal(as_matrix([1.0, 3.0]), np.diag([1.0, 3.0]))
    with pytest.raises(DimensionMismatch):
        as_matrix(np.eye(2), 3)
