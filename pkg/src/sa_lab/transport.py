"""Wasserstein-p estimators and moment diagnostics over equal-weight sample clouds."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from . import rng
from .errors import NotPSD, SizeLimit, UnequalSizes
from .spectral import psd_sqrt, weighted_row_norms

EXACT_LIMIT = 4096
METHODS = ("exact_1d", "exact_assignment", "sliced", "gaussian_closed_form")


@dataclass(frozen=True)
class EmpiricalMeasure:
    samples: np.ndarray
    weight_matrix: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("an empirical measure needs at least two points")
        if not np.all(np.isfinite(X)):
            raise ValueError("empirical measure contains non-finite points")
        object.__setattr__(self, "samples", X)

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def n(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class WassersteinEstimate:
    p: float
    value: float
    method: str
    n_used: int
    se: float = None
    flags: tuple = field(default=())

    def __float__(self):
        return float(self.value)


def _points(m):
    if isinstance(m, EmpiricalMeasure):
        return m.samples
    X = np.asarray(m, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _flags(p):
    return ("high_variance",) if p > 4 else ()


def _check_sizes(X, Y):
    if X.shape[0] != Y.shape[0]:
        raise UnequalSizes(f"sample counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimensions differ: {X.shape[1]} vs {Y.shape[1]}")


def _sorted_cost(x, y, p):
    return float(np.mean(np.abs(np.sort(x) - np.sort(y)) ** p))


def wasserstein_1d(mu, nu, p=1):
    X, Y = _points(mu), _points(nu)
    _check_sizes(X, Y)
    if X.shape[1] != 1:
        raise ValueError("wasserstein_1d needs scalar samples")
    v = _sorted_cost(X[:, 0], Y[:, 0], p) ** (1.0 / p)
    return WassersteinEstimate(p=p, value=v, method="exact_1d", n_used=X.shape[0],
                               flags=_flags(p))


def optimal_assignment(X, Y, p, Q=None):
    """Return the optimal permutation and the per-pair costs ``||x_i - y_s(i)||_Q^p``."""
    if Q is not None:
        R = psd_sqrt(Q)
        X, Y = X @ R, Y @ R
    C = cdist(X, Y) ** p
    rows, cols = linear_sum_assignment(C)
    return cols, C[rows, cols]


def wasserstein_exact(mu, nu, p=1, Q=None):
    """Exact empirical OT between equal-size clouds via the assignment problem."""
    X, Y = _points(mu), _points(nu)
    _check_sizes(X, Y)
    if X.shape[0] > EXACT_LIMIT:
        raise SizeLimit(f"exact assignment limited to n <= {EXACT_LIMIT}, got {X.shape[0]}")
    if Q is None and isinstance(mu, EmpiricalMeasure):
        Q = mu.weight_matrix
    _, costs = optimal_assignment(X, Y, p, Q)
    v = float(np.mean(costs)) ** (1.0 / p)
    return WassersteinEstimate(p=p, value=v, method="exact_assignment", n_used=X.shape[0],
                               flags=_flags(p))


def wasserstein_sliced(mu, nu, p=1, n_directions=64, seed=0):
    """Mean over random unit directions of the 1-D cost, then ``1/p`` root.

    A surrogate that never exceeds the exact value; not for acceptance use.
    """
    X, Y = _points(mu), _points(nu)
    _check_sizes(X, Y)
    d = X.shape[1]
    if d == 1:
        v = _sorted_cost(X[:, 0], Y[:, 0], p)
    else:
        theta = rng.stream(seed, 0, rng.AUX).standard_normal((n_directions, d))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        px, py = X @ theta.T, Y @ theta.T
        v = float(np.mean(np.abs(np.sort(px, axis=0) - np.sort(py, axis=0)) ** p))
    return WassersteinEstimate(p=p, value=v ** (1.0 / p), method="sliced",
                               n_used=X.shape[0], flags=_flags(p) + ("surrogate",))


def gaussian_w2(mean1, cov1, mean2, cov2):
    """Closed-form W2 between Gaussians (Bures metric plus mean shift)."""
    m1, m2 = np.atleast_1d(mean1).astype(float), np.atleast_1d(mean2).astype(float)
    C1, C2 = np.atleast_2d(cov1).astype(float), np.atleast_2d(cov2).astype(float)
    for C in (C1, C2):
        if np.linalg.eigvalsh(0.5 * (C + C.T)).min() < -1e-10:
            raise NotPSD("Gaussian covariance is not PSD")
    r2 = psd_sqrt(C2)
    cross = psd_sqrt(r2 @ C1 @ r2, tol=1e-10)
    tr = np.trace(C1) + np.trace(C2) - 2.0 * np.trace(cross)
    return float(np.sqrt(max(float(np.sum((m1 - m2) ** 2)) + tr, 0.0)))


def bootstrap_se(estimator, mu, nu, n_boot=50, seed=0):
    """Standard error of ``estimator(X*, Y*)`` under independent resampling of both clouds."""
    X, Y = _points(mu), _points(nu)
    gen = rng.stream(seed, 0, rng.AUX)
    vals = np.empty(n_boot)
    for b in range(n_boot):
        ix = gen.integers(0, X.shape[0], X.shape[0])
        iy = gen.integers(0, Y.shape[0], Y.shape[0])
        vals[b] = float(estimator(X[ix], Y[iy]))
    return float(vals.std(ddof=1))


def kurtosis_se(n):
    """Standard error of the sample excess kurtosis under normality."""
    n = float(n)
    return float(np.sqrt(24.0 * n * (n - 1) ** 2 / ((n - 3) * (n - 2) * (n + 3) * (n + 5))))


@dataclass(frozen=True)
class MomentProfile:
    orders: tuple
    values: np.ndarray
    kurtosis: np.ndarray
    kurtosis_se: float
    n: int


def moment_profile(mu, orders=(1, 2, 4), Q=None):
    X = _points(mu)
    orders = tuple(float(p) for p in orders)
    if min(orders) < 1:
        raise ValueError("moment orders must be >= 1")
    r = weighted_row_norms(X, Q)
    vals = np.array([np.mean(r ** p) ** (1.0 / p) for p in orders])
    c = X - X.mean(axis=0)
    m2 = np.mean(c ** 2, axis=0)
    m4 = np.mean(c ** 4, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        kurt = np.where(m2 > 0, m4 / m2 ** 2 - 3.0, 0.0)
    n = X.shape[0]
    return MomentProfile(orders=orders, values=vals, kurtosis=kurt,
                         kurtosis_se=kurtosis_se(n) if n > 3 else float("nan"), n=n)


def gaussian_abs_moment(p):
    """``E|Z|^p`` for a standard normal."""
    from math import gamma, pi, sqrt
    return 2 ** (p / 2) * gamma((p + 1) / 2) / sqrt(pi)
