import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sa_lab.errors import NotHurwitz, NotPSD, NotSPD
from sa_lab.spectral import (DriftMatrix, k_grid, matrix_exponential_action, psd_sqrt,
                             solve_lyapunov, solve_stationary_covariance, weighted_norm)

from conftest import random_hurwitz


def kron_oracle(A, C):
    # Gaussian elimination on the d^2 system, no library solver
    d = A.shape[0]
    K = np.zeros((d * d, d * d))
    for i in range(d):
        for j in range(d):
            row = i * d + j
            for l in range(d):
                K[row, l * d + j] += A[i, l]
                K[row, i * d + l] += A[j, l]
    rhs = C.reshape(-1).copy()
    n = d * d
    M = np.hstack([K, rhs[:, None]])
    for c in range(n):
        p = c + int(np.argmax(np.abs(M[c:, c])))
        M[[c, p]] = M[[p, c]]
        M[c] /= M[c, c]
        for r in range(n):
            if r != c:
                M[r] -= M[r, c] * M[c]
    return M[:, -1].reshape(d, d)


def test_identity_drift():
    sol = solve_lyapunov(DriftMatrix(np.eye(2)))
    assert np.allclose(sol.Q, 0.5 * np.eye(2), atol=1e-14)
    assert sol.lambda_dt == pytest.approx(2.0)
    assert sol.lambda_ct == pytest.approx(1.0)


def test_diagonal_drift():
    sol = solve_lyapunov(DriftMatrix(np.diag([1.0, 2.0])))
    assert np.allclose(sol.Q, np.diag([0.5, 0.25]), atol=1e-14)
    assert np.linalg.norm(sol.Q, 2) == pytest.approx(0.5)
    assert sol.lambda_dt == pytest.approx(2.0)


def test_jordan_block_against_kronecker_elimination():
    A = np.array([[1.0, 0.5], [0.0, 1.0]])
    sol = solve_lyapunov(DriftMatrix(A))
    assert np.allclose(sol.Q, kron_oracle(A, np.eye(2)), atol=1e-12)
    assert sol.residual <= 1e-10


@pytest.mark.parametrize("A,G,expected", [
    ([[1.0]], [[2.0]], [[1.0]]),
    (np.eye(3), np.diag([2.0, 4.0, 6.0]), np.diag([1.0, 2.0, 3.0])),
])
def test_stationary_covariance_closed_forms(A, G, expected):
    cov = solve_stationary_covariance(DriftMatrix(np.array(A)), np.array(G))
    assert np.allclose(cov.sigma_a, expected, atol=1e-14)


def test_stationary_covariance_upper_triangular():
    A = np.array([[2.0, 1.0], [0.0, 3.0]])
    cov = solve_stationary_covariance(DriftMatrix(A), np.eye(2))
    assert np.allclose(cov.sigma_a, kron_oracle(A, np.eye(2)), atol=1e-12)
    assert np.linalg.norm(A @ cov.sigma_a + cov.sigma_a @ A.T - np.eye(2)) <= 1e-10


def test_not_hurwitz_rejected():
    with pytest.raises(NotHurwitz):
        solve_lyapunov(DriftMatrix(np.array([[1.0, 0.0], [0.0, -0.1]])))
    with pytest.raises(NotHurwitz):
        solve_stationary_covariance(DriftMatrix(np.array([[0.0]])), np.array([[1.0]]))


def test_gamma_not_psd_rejected():
    with pytest.raises(NotPSD):
        solve_stationary_covariance(DriftMatrix(np.eye(2)), np.diag([1.0, -1.0]))


def test_a_eq_1_mode_subtracts_half_inverse_gamma1():
    D = DriftMatrix.from_jacobian(np.array([[2.0]]), a=1.0, gamma1=2.0)
    assert D.mode == "a_eq_1"
    assert D.entries[0, 0] == pytest.approx(1.75)
    assert DriftMatrix.from_jacobian(np.array([[2.0]]), 0.7, 2.0).mode == "a_lt_1"


@pytest.mark.parametrize("Q,x,expected", [
    (np.eye(2), [3.0, 4.0], 5.0),
    (4 * np.eye(2), [1.0, 0.0], 2.0),
])
def test_weighted_vector_norm(Q, x, expected):
    assert weighted_norm(Q, np.array(x)) == pytest.approx(expected)


def test_weighted_operator_norm_diagonal():
    # Q^{1/2} A Q^{-1/2} = A for commuting diagonals, largest entry 3
    assert weighted_norm(np.diag([1.0, 4.0]), np.diag([2.0, 3.0])) == pytest.approx(3.0)


def test_weighted_norm_rejects_indefinite():
    with pytest.raises(NotSPD):
        weighted_norm(np.diag([1.0, -1.0]), np.ones(2))


def test_exponential_action_examples():
    v = np.array([0.3, -1.2])
    assert np.array_equal(matrix_exponential_action(DriftMatrix(np.eye(2)), 0.0, v), v)
    out = matrix_exponential_action(DriftMatrix(np.array([[1.0]])), math.log(2.0), np.array([1.0]))
    assert out[0] == pytest.approx(0.5, rel=1e-14)
    out = matrix_exponential_action(DriftMatrix(np.eye(2)), 1.0, np.ones(2))
    assert np.allclose(out, np.exp(-1.0), rtol=1e-14)


def test_exponential_action_series_oracle():
    gen = np.random.default_rng(5)
    for _ in range(20):
        A = random_hurwitz(gen, 4)
        t = 1.0 / np.linalg.norm(A, 2)
        v = gen.normal(size=4)
        term, total = v.copy(), v.copy()
        for j in range(1, 40):
            term = -(A @ term) * t / j
            total = total + term
        got = matrix_exponential_action(DriftMatrix(A), t, v)
        assert np.linalg.norm(got - total) <= 1e-10 * np.linalg.norm(total)


def test_exponential_action_dimension_mismatch():
    with pytest.raises(ValueError):
        matrix_exponential_action(DriftMatrix(np.eye(2)), 1.0, np.ones(3))


@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_lyapunov_residual_property(d, seed):
    A = random_hurwitz(np.random.default_rng(seed), d)
    sol = solve_lyapunov(DriftMatrix(A))
    assert np.linalg.norm(A @ sol.Q + sol.Q @ A.T - np.eye(d)) <= 1e-10 * d * max(1.0, np.linalg.norm(A))
    assert np.all(np.linalg.eigvalsh(sol.Q) > 0)


@given(st.integers(1, 6), st.integers(0, 2 ** 31), st.floats(0.0, 1.0))
def test_certified_contraction(d, seed, frac):
    A = random_hurwitz(np.random.default_rng(seed), d)
    sol = solve_lyapunov(DriftMatrix(A))
    g = frac * sol.gamma_contract
    P = np.linalg.inv(sol.Q)
    assert weighted_norm(P, np.eye(d) - g * A) <= 1 - g * sol.lambda_contract + 1e-12


def test_textbook_contraction_constants_can_fail():
    # the formula-level constants are kept as reported values; e.g. A = I, gamma = gamma_max
    sol = solve_lyapunov(DriftMatrix(np.eye(2)))
    g = sol.gamma_max
    assert weighted_norm(sol.Q, np.eye(2) - g * np.eye(2)) > 1 - g * sol.lambda_dt


@given(st.integers(1, 5), st.integers(0, 2 ** 31))
def test_exponential_stability_prefactor(d, seed):
    A = random_hurwitz(np.random.default_rng(seed), d)
    sol = solve_lyapunov(DriftMatrix(A))
    half = psd_sqrt(sol.Q)
    inv_half = np.linalg.inv(half)
    for t in k_grid(sol.lambda_ct)[::37]:
        E = matrix_exponential_action(DriftMatrix(A), t, np.eye(d)).T
        lhs = np.linalg.norm(half @ E @ inv_half, 2)
        assert lhs <= sol.K * math.exp(-sol.lambda_ct * t) * (1 + 1e-9)


@given(st.integers(1, 6), st.integers(0, 2 ** 31))
def test_metric_equivalence(d, seed):
    gen = np.random.default_rng(seed)
    B = gen.normal(size=(d, d))
    Q = B @ B.T + 0.1 * np.eye(d)
    x = gen.normal(size=d)
    ev = np.linalg.eigvalsh(Q)
    n, e = weighted_norm(Q, x), np.linalg.norm(x)
    assert math.sqrt(ev.min()) * e <= n * (1 + 1e-12)
    assert n <= math.sqrt(ev.max()) * e * (1 + 1e-12)


def test_psd_sqrt_clamps_tiny_negative():
    M = np.diag([1.0, -1e-14])
    R = psd_sqrt(M)
    assert np.allclose(R @ R, np.diag([1.0, 0.0]), atol=1e-12)
    with pytest.raises(NotPSD):
        psd_sqrt(np.diag([1.0, -1e-6]))
