import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sa_lab.errors import NotPSD, SizeLimit, UnequalSizes
from sa_lab.io import read_samples_csv
from sa_lab.transport import (EXACT_LIMIT, EmpiricalMeasure, bootstrap_se, gaussian_abs_moment,
                              gaussian_w2, kurtosis_se, moment_profile, wasserstein_1d,
                              wasserstein_exact, wasserstein_sliced)

from conftest import fixture_path


def brute_force(X, Y, p):
    """Minimum over every permutation; only for n <= 7."""
    n = len(X)
    C = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2) ** p
    best = min(C[np.arange(n), list(s)].sum() for s in itertools.permutations(range(n)))
    return (best / n) ** (1 / p)


def clouds(seed, n, d, shift=0.0):
    gen = np.random.default_rng(seed)
    return gen.standard_normal((n, d)), gen.standard_normal((n, d)) * 1.5 + shift


@pytest.mark.parametrize("p", [1, 2])
def test_shipped_fixture_matches_frozen_brute_force(p):
    A = read_samples_csv(fixture_path("samples_a.csv"))
    B = read_samples_csv(fixture_path("samples_b.csv"))
    frozen = json.load(open(fixture_path("samples_expected.json")))
    assert abs(wasserstein_exact(A, B, p).value - frozen["wasserstein_exact"][str(p)]) <= 1e-12
    assert abs(brute_force(A, B, p) - frozen["wasserstein_exact"][str(p)]) <= 1e-12


@given(st.integers(0, 2**31), st.integers(2, 6), st.integers(1, 3), st.sampled_from([1.0, 1.5, 2.0]))
def test_exact_assignment_equals_brute_force(seed, n, d, p):
    X, Y = clouds(seed, n, d, 0.3)
    assert wasserstein_exact(X, Y, p).value == pytest.approx(brute_force(X, Y, p), rel=1e-12)


@given(st.integers(0, 2**31), st.integers(2, 6), st.sampled_from([1.0, 2.0, 3.0]))
def test_sorted_coupling_is_optimal_in_one_dimension(seed, n, p):
    X, Y = clouds(seed, n, 1)
    assert wasserstein_1d(X, Y, p).value == pytest.approx(brute_force(X, Y, p), rel=1e-12)


@pytest.mark.parametrize("x,y,p,expected", [
    ([0.0, 1.0], [2.0, 3.0], 1, 2.0),
    ([0.0, 4.0], [1.0, 1.0], 2, math.sqrt(5.0)),
    ([3.0, 0.0, 1.0], [1.0, 3.0, 0.0], 1, 0.0),
])
def test_1d_hand_examples(x, y, p, expected):
    assert wasserstein_1d(x, y, p).value == pytest.approx(expected)


@given(st.integers(0, 2**31), st.integers(2, 12), st.integers(1, 3))
def test_metric_axioms(seed, n, d):
    gen = np.random.default_rng(seed)
    X, Y, Z = (gen.standard_normal((n, d)) for _ in range(3))
    for p in (1, 2):
        xy = wasserstein_exact(X, Y, p).value
        assert xy == pytest.approx(wasserstein_exact(Y, X, p).value, rel=1e-12)
        assert wasserstein_exact(X, X[gen.permutation(n)], p).value == pytest.approx(0, abs=1e-12)
        assert xy <= wasserstein_exact(X, Z, p).value + wasserstein_exact(Z, Y, p).value + 1e-12


@given(st.integers(0, 2**31), st.integers(4, 40))
def test_translation_and_monotonicity_in_p(seed, n):
    X, Y = clouds(seed, n, 2)
    shift = np.array([[2.0, -1.0]])
    assert wasserstein_exact(X, X + shift, 2).value == pytest.approx(math.sqrt(5), rel=1e-12)
    w1, w2 = wasserstein_exact(X, Y, 1).value, wasserstein_exact(X, Y, 2).value
    assert w1 <= w2 + 1e-12


@given(st.integers(0, 2**31), st.integers(4, 60))
def test_sliced_never_exceeds_exact(seed, n):
    X, Y = clouds(seed, n, 3, 0.5)
    for p in (1, 2):
        assert wasserstein_sliced(X, Y, p, 32, seed).value <= wasserstein_exact(X, Y, p).value + 1e-12


def test_sliced_is_deterministic_and_flagged():
    X, Y = clouds(5, 30, 2)
    a, b = wasserstein_sliced(X, Y, 1, 16, 3), wasserstein_sliced(X, Y, 1, 16, 3)
    assert a.value == b.value and "surrogate" in a.flags
    assert wasserstein_sliced(X[:, :1], Y[:, :1], 2).value == pytest.approx(
        wasserstein_1d(X[:, :1], Y[:, :1], 2).value)


def test_weighted_cost():
    X, Y = clouds(2, 20, 2)
    assert wasserstein_exact(X, Y, 1, Q=4 * np.eye(2)).value == pytest.approx(
        2 * wasserstein_exact(X, Y, 1).value, rel=1e-12)
    weighted = EmpiricalMeasure(X, weight_matrix=9 * np.eye(2))
    assert wasserstein_exact(weighted, Y, 2).value == pytest.approx(
        3 * wasserstein_exact(X, Y, 2).value, rel=1e-12)


def test_high_order_flag():
    X, Y = clouds(1, 10, 1)
    assert "high_variance" in wasserstein_1d(X, Y, 6).flags
    assert wasserstein_1d(X, Y, 2).flags == ()


def test_input_errors():
    X, Y = clouds(1, 10, 2)
    with pytest.raises(UnequalSizes):
        wasserstein_exact(X, Y[:9])
    with pytest.raises(ValueError):
        wasserstein_exact(X, Y[:, :1])
    with pytest.raises(ValueError):
        wasserstein_1d(X, Y)
    with pytest.raises(SizeLimit):
        wasserstein_exact(np.zeros((EXACT_LIMIT + 1, 1)), np.zeros((EXACT_LIMIT + 1, 1)))
    with pytest.raises(ValueError):
        EmpiricalMeasure([[1.0]])
    with pytest.raises(ValueError):
        EmpiricalMeasure([[1.0], [np.nan]])


@pytest.mark.parametrize("m1,S1,m2,S2,expected", [
    ([0.0], [[1.0]], [3.0], [[4.0]], math.sqrt(9 + 1)),
    ([0, 0], np.diag([1.0, 9.0]), [0, 0], np.diag([4.0, 1.0]), math.sqrt(1 + 4)),
    ([1, 2], [[2.0, 0.5], [0.5, 1.0]], [1, 2], [[2.0, 0.5], [0.5, 1.0]], 0.0),
])
def test_gaussian_w2_closed_forms(m1, S1, m2, S2, expected):
    assert gaussian_w2(m1, S1, m2, S2) == pytest.approx(expected, abs=1e-7)


def test_gaussian_w2_rotation_oracle():
    # rotating a covariance by 90 degrees in 2d swaps its eigenvalues
    S1 = np.diag([4.0, 1.0])
    S2 = np.diag([1.0, 4.0])
    assert gaussian_w2([0, 0], S1, [0, 0], S2) == pytest.approx(math.sqrt(2.0))
    with pytest.raises(NotPSD):
        gaussian_w2([0], [[-1.0]], [0], [[1.0]])


def test_bootstrap_se_behaviour():
    X, Y = clouds(4, 200, 1)
    est = lambda a, b: wasserstein_1d(a, b, 1).value
    se = bootstrap_se(est, X, Y, 40, 2)
    assert se == bootstrap_se(est, X, Y, 40, 2)
    assert 0 < se < 0.5


@pytest.mark.parametrize("p,expected", [(1, math.sqrt(2 / math.pi)), (2, 1.0), (4, 3.0), (6, 15.0)])
def test_gaussian_abs_moments(p, expected):
    assert gaussian_abs_moment(p) == pytest.approx(expected, rel=1e-12)


def test_kurtosis_se_limit():
    assert kurtosis_se(10**8) == pytest.approx(math.sqrt(24 / 10**8), rel=1e-6)


def test_moment_profile_gaussian_sample():
    n = 400_000
    X = np.random.default_rng(8).standard_normal((n, 1))
    prof = moment_profile(X)
    for order, v in zip(prof.orders, prof.values):
        assert v == pytest.approx(gaussian_abs_moment(order) ** (1 / order), rel=0.01)
    assert abs(prof.kurtosis[0]) <= 3 * prof.kurtosis_se


def test_moment_profile_known_values():
    prof = moment_profile(np.array([[-1.0], [1.0], [-1.0], [1.0]]), orders=(1, 2))
    assert np.allclose(prof.values, [1.0, 1.0])
    assert prof.kurtosis[0] == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        moment_profile(np.ones((4, 1)), orders=(0.5,))
