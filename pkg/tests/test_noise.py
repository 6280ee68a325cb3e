import numpy as np
import pytest
from hypothesis import given, strategies as st

from sa_lab.errors import NotCentered, NotPSD, Reducible
from sa_lab.noise import (MarkovChainSpec, MDSSpec, NoiseStreams, PoissonSolution,
                          asymptotic_gamma, martingale_increments, poisson_residual,
                          sample_path, solve_poisson, stationary_distribution,
                          verify_drift_condition)

from conftest import TWO_STATE, random_chain


def test_symmetric_two_state_stationary():
    chain = MarkovChainSpec(np.full((2, 2), 0.5), np.array([1.0, 0.0]))
    assert np.allclose(stationary_distribution(chain), [0.5, 0.5], atol=1e-15)


def test_two_state_stationary_hand_elimination():
    # pi_0 * 0.1 = pi_1 * 0.2 and pi_0 + pi_1 = 1
    pi = stationary_distribution(TWO_STATE)
    assert pi == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


def test_doubly_stochastic_uniform():
    P = np.array([[0.2, 0.5, 0.3], [0.3, 0.2, 0.5], [0.5, 0.3, 0.2]])
    pi = stationary_distribution(MarkovChainSpec(P, np.ones(3) / 3))
    assert np.allclose(pi, 1 / 3, atol=1e-15)


@pytest.mark.parametrize("P", [
    [[0.0, 1.0], [1.0, 0.0]],
    [[1.0, 0.0], [0.5, 0.5]],
])
def test_periodic_or_reducible_rejected(P):
    with pytest.raises(Reducible):
        stationary_distribution(MarkovChainSpec(np.array(P), np.array([0.5, 0.5])))


def test_transition_must_be_stochastic():
    with pytest.raises(ValueError):
        MarkovChainSpec(np.array([[0.5, 0.6], [0.5, 0.5]]), np.array([0.5, 0.5]))


@pytest.mark.parametrize("c", [0.0, 1.0, -3.5])
def test_poisson_symmetric_chain_returns_g(c):
    chain = MarkovChainSpec(np.full((2, 2), 0.5), np.array([0.5, 0.5]))
    sol = solve_poisson(chain, np.array([[c], [-c]]))
    assert np.allclose(sol.phi, [[c], [-c]], atol=1e-15)


def test_poisson_neumann_oracle():
    pi = stationary_distribution(TWO_STATE)
    g = np.array([1.0, -2.0])
    g = g - pi @ g
    phi = solve_poisson(TWO_STATE, g[:, None]).phi[:, 0]
    term, total = g.copy(), g.copy()
    for _ in range(2000):
        term = TWO_STATE.transition @ term
        total += term
    assert np.allclose(phi, total, atol=1e-8)
    assert abs(pi @ phi) <= 1e-14


def test_poisson_requires_centering():
    with pytest.raises(NotCentered):
        solve_poisson(TWO_STATE, np.array([[1.0], [1.0]]))


def test_poisson_matrix_payload():
    pi = stationary_distribution(TWO_STATE)
    A = np.array([[[1.0, 2.0], [0.0, 1.0]], [[3.0, 0.0], [1.0, 1.0]]])
    g = A - np.tensordot(pi, A, axes=(0, 0))
    sol = solve_poisson(TWO_STATE, np.zeros((2, 2)), g)
    resid = sol.phi_a - np.tensordot(TWO_STATE.transition, sol.phi_a, axes=(1, 0)) - g
    assert np.abs(resid).max() <= 1e-10
    assert np.abs(np.tensordot(pi, sol.phi_a, axes=(0, 0))).max() <= 1e-12


@given(st.integers(2, 20), st.integers(0, 2 ** 31))
def test_poisson_residual_property(S, seed):
    gen = np.random.default_rng(seed)
    chain = random_chain(gen, S)
    pi = stationary_distribution(chain)
    g = gen.normal(size=(S, 2))
    g -= pi @ g
    sol = solve_poisson(chain, g)
    assert poisson_residual(chain, g, sol.phi) <= 1e-9


def test_gamma_iid_chain_is_stationary_covariance():
    p = np.array([0.2, 0.5, 0.3])
    chain = MarkovChainSpec.iid(p)
    f = np.array([[1.0], [-0.2], [-1.0 / 3.0]])
    f -= p @ f
    gam = asymptotic_gamma(chain, solve_poisson(chain, f))
    assert gam.gamma_xi[0, 0] == pytest.approx(float(p @ f[:, 0] ** 2), rel=1e-12)


def test_gamma_pure_additive():
    mds = MDSSpec("gaussian_iid", np.eye(2))
    gam = asymptotic_gamma(TWO_STATE, solve_poisson(TWO_STATE, np.zeros((2, 2))), mds)
    assert np.allclose(gam.gamma_mat, np.eye(2), atol=1e-15)
    assert np.allclose(gam.gamma_mat, gam.gamma_xi + gam.gamma_w)


def test_gamma_matches_long_run_variance_closed_form():
    # for a two-state chain the long-run variance is Var_pi(g) (1 + lam)/(1 - lam)
    pi = stationary_distribution(TWO_STATE)
    g = np.array([1.0, -2.0])
    g -= pi @ g
    lam = 1 - 0.1 - 0.2
    gam = asymptotic_gamma(TWO_STATE, solve_poisson(TWO_STATE, g[:, None]))
    assert gam.gamma_xi[0, 0] == pytest.approx(pi @ g ** 2 * (1 + lam) / (1 - lam), rel=1e-12)


def test_gamma_monte_carlo():
    pi = stationary_distribution(TWO_STATE)
    g = np.array([1.0, -2.0])
    g -= pi @ g
    sol = solve_poisson(TWO_STATE, g[:, None])
    mds = MDSSpec("gaussian_iid", np.zeros((1, 1)))
    gam = asymptotic_gamma(TWO_STATE, sol, mds).gamma_mat[0, 0]
    n, T = 2000, 2000
    streams = NoiseStreams(TWO_STATE, mds, 11, np.arange(n))
    xi, w = streams.next_chunk(T)
    m = martingale_increments(TWO_STATE, sol, xi, w)[..., 0]
    s = m.sum(axis=1) / np.sqrt(T)
    var, se = s.var(ddof=1), s.var(ddof=1) * np.sqrt(2.0 / (n - 1))
    assert abs(var - gam) <= 3 * se


def test_sample_path_deterministic_and_reconstructs():
    mds = MDSSpec("gaussian_iid", np.array([[0.5]]))
    pi = stationary_distribution(TWO_STATE)
    g = np.array([[1.0], [-2.0]]) - pi @ np.array([[1.0], [-2.0]])
    sol = solve_poisson(TWO_STATE, g)
    a = sample_path(TWO_STATE, mds, 500, seed=3, poisson=sol)
    b = sample_path(TWO_STATE, mds, 500, seed=3, poisson=sol)
    assert np.array_equal(a.xi, b.xi) and np.array_equal(a.w, b.w) and np.array_equal(a.m, b.m)
    pphi = TWO_STATE.transition @ sol.phi
    for k in range(1, 500):
        expected = -(sol.phi[a.xi[k]] - pphi[a.xi[k - 1]]) - a.w[k]
        assert np.array_equal(a.m[k], expected)
    assert a[0].xi_index == a.xi[0]


def test_zero_mds_covariance_gives_zero_w():
    path = sample_path(TWO_STATE, MDSSpec("gaussian_iid", np.zeros((2, 2))), 200, seed=1)
    assert not np.any(path.w)


def test_mds_mean_zero_over_many_draws():
    pi = stationary_distribution(TWO_STATE)
    g = np.array([[1.0], [-2.0]]) - pi @ np.array([[1.0], [-2.0]])
    sol = solve_poisson(TWO_STATE, g)
    path = sample_path(TWO_STATE, MDSSpec("gaussian_iid", np.eye(1)), 10 ** 6, 9, sol)
    m = path.m[:, 0]
    # successive M_k are uncorrelated, so the iid standard error applies
    assert abs(m.mean()) <= 4 * m.std() / np.sqrt(m.size)


def test_mds_regression_on_past():
    pi = stationary_distribution(TWO_STATE)
    g = np.array([[1.0], [-2.0]]) - pi @ np.array([[1.0], [-2.0]])
    sol = solve_poisson(TWO_STATE, g)
    path = sample_path(TWO_STATE, MDSSpec("gaussian_iid", np.eye(1)), 10 ** 5, 4, sol)
    y = path.m[1:, 0]
    X = np.column_stack([np.ones(y.size), path.xi[:-1], path.w[:-1, 0]])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    cov = np.linalg.inv(X.T @ X) * resid.var(ddof=3)
    assert np.all(np.abs(beta) <= 4 * np.sqrt(np.diag(cov)))


@pytest.mark.parametrize("kind", ["gaussian_iid", "bounded_iid", "scaled_student_t"])
def test_mds_kinds_have_requested_covariance(kind):
    C = np.array([[1.0, 0.3], [0.3, 0.5]])
    mds = MDSSpec(kind, C, moment_order=2, dof=12.0 if kind == "scaled_student_t" else None)
    W = mds.draw(np.random.default_rng(0), 200_000)
    assert np.allclose(np.cov(W.T), C, atol=0.02)


def test_student_t_dof_guard():
    with pytest.raises(ValueError):
        MDSSpec("scaled_student_t", np.eye(1), moment_order=2, dof=6.0)
    with pytest.raises(NotPSD):
        MDSSpec("gaussian_iid", -np.eye(1))


def test_noise_chunks_continue_streams():
    mds = MDSSpec("gaussian_iid", np.eye(2))
    one = NoiseStreams(TWO_STATE, mds, 5, np.arange(3))
    xi, w = one.next_chunk(100)
    two = NoiseStreams(TWO_STATE, mds, 5, np.arange(3))
    parts = [two.next_chunk(40), two.next_chunk(60, time_major=True)]
    assert np.array_equal(xi, np.hstack([parts[0][0], parts[1][0].T]))
    assert np.array_equal(w, np.concatenate([parts[0][1], parts[1][1].transpose(1, 0, 2)], axis=1))


def test_drift_constant_function():
    rho, C = verify_drift_condition(TWO_STATE, np.ones(2))
    assert C == pytest.approx(1 - rho)


def test_drift_iid_direct_evaluation():
    p = np.array([0.3, 0.7])
    chain = MarkovChainSpec.iid(p)
    V = np.array([2.0, 5.0])
    rho, C = verify_drift_condition(chain, V)
    assert C == pytest.approx(p @ V - rho * V.min())


def test_drift_two_state_grid_oracle():
    V = np.array([1.0, 10.0])
    rho, C = verify_drift_condition(TWO_STATE, V)
    PV = TWO_STATE.transition @ V
    best = None
    for r in np.arange(0, 1000) / 1000:
        c = max(PV[s] - r * V[s] for s in range(2))
        if c > 0 and (best is None or c / (1 - r) < best[0]):
            best = (c / (1 - r), r, c)
    assert (rho, C) == pytest.approx(best[1:])


def test_drift_requires_v_at_least_one():
    with pytest.raises(ValueError):
        verify_drift_condition(TWO_STATE, np.array([0.5, 2.0]))


def test_zero_rhs_zero_solution():
    sol = solve_poisson(TWO_STATE, np.zeros((2, 3)))
    assert isinstance(sol, PoissonSolution) and not np.any(sol.phi)
