"""Linear-algebra substrate: Lyapunov solves, weighted norms, stability constants."""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NotHurwitz, NotPSD, NotSPD, SolverDivergence

K_GRID_POINTS = 512


def _tol(*arrays):
    scale = max([1.0] + [float(np.linalg.norm(np.atleast_2d(a))) for a in arrays])
    return 1e-10 * scale


@dataclass(frozen=True)
class DriftMatrix:
    """The linearised drift of the scaled error.

    ``mode`` is ``"a_lt_1"`` when the entries equal the mean-field Jacobian at
    the root, ``"a_eq_1"`` when the ``-I/(2*gamma1)`` correction of the
    ``a = 1`` schedule has been folded in.
    """

    entries: np.ndarray
    mode: str = "a_lt_1"

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"drift matrix must be square, got {m.shape}")
        if self.mode not in ("a_lt_1", "a_eq_1"):
            raise ValueError(f"unknown drift mode {self.mode!r}")
        object.__setattr__(self, "entries", m)

    @property
    def dim(self):
        return self.entries.shape[0]

    def eigenvalues(self):
        return np.linalg.eigvals(self.entries)

    def is_hurwitz(self):
        """True when every eigenvalue has strictly positive real part."""
        return bool(np.all(self.eigenvalues().real > 0))

    @classmethod
    def from_jacobian(cls, grad_f_bar_at_star, a, gamma1):
        """Build the drift for step exponent ``a``.

        For ``a < 1`` this is the Jacobian itself; for ``a == 1`` the limit
        ``a / (2 n gamma_n) -> 1 / (2 gamma1)`` is subtracted on the diagonal.
        """
        J = np.atleast_2d(np.asarray(grad_f_bar_at_star, dtype=float))
        if a == 1:
            return cls(J - np.eye(J.shape[0]) / (2.0 * gamma1), mode="a_eq_1")
        return cls(J, mode="a_lt_1")


def _check_hurwitz(a_bar):
    ev = a_bar.eigenvalues()
    if not np.all(ev.real > 0):
        raise NotHurwitz(f"drift has eigenvalue(s) with nonpositive real part: {ev}")


def solve_sylvester_kron(A, C):
    """Solve ``A X + X A^T = C`` through the d^2 x d^2 Kronecker system."""
    A = np.atleast_2d(A)
    C = np.atleast_2d(C)
    d = A.shape[0]
    I = np.eye(d)
    K = np.kron(I, A) + np.kron(A, I)
    x = np.linalg.solve(K, C.reshape(-1, order="F"))
    return x.reshape((d, d), order="F")


def psd_sqrt(M, tol=1e-12):
    """Symmetric PSD square root; eigenvalues in ``[-tol*scale, 0)`` are clamped."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    S = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(S)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -tol * scale:
        raise NotPSD(f"matrix has eigenvalue {w.min():.3e} < 0")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def _check_spd(Q):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, rtol=1e-10, atol=_tol(Q)):
        raise NotSPD("weight matrix is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    if w.min() <= 0:
        raise NotSPD(f"weight matrix has eigenvalue {w.min():.3e} <= 0")
    return Q, w


def weighted_norm(Q, x):
    """``sqrt(x^T Q x)`` for a vector; the induced operator norm for a matrix."""
    Q, w = _check_spd(Q)
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = np.atleast_1d(x)
        return float(np.sqrt(max(x @ Q @ x, 0.0)))
    A = np.atleast_2d(x)
    V = np.linalg.eigh(0.5 * (Q + Q.T))[1]
    half = (V * np.sqrt(w)) @ V.T
    inv_half = (V / np.sqrt(w)) @ V.T
    return float(np.linalg.norm(half @ A @ inv_half, 2))


def weighted_row_norms(X, Q=None):
    """Row-wise ``||x||_Q`` for an ``(n, d)`` array (Euclidean when ``Q`` is None)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Q is None:
        return np.sqrt(np.einsum("ij,ij->i", X, X))
    Q, _ = _check_spd(Q)
    return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, Q, X), 0.0))


def matrix_exponential_action(a_bar, t, v):
    """Return ``exp(-A t) v`` (scaling-and-squaring via scipy)."""
    A = a_bar.entries if isinstance(a_bar, DriftMatrix) else np.atleast_2d(a_bar)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != A.shape[0]:
        raise ValueError(f"dimension mismatch: drift {A.shape}, vector {v.shape}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return v.copy()
    return v @ scipy.linalg.expm(-A * t).T


@dataclass(frozen=True)
class LyapunovSolution:
    """Solution of ``A Q + Q A^T = I`` with the derived stability constants.

    ``lambda_dt``, ``lambda_ct`` and ``gamma_max`` follow the textbook
    formulas in ``||Q||_2``. ``lambda_contract``/``gamma_contract`` are the
    constants that are actually certified: for ``gamma <= gamma_contract``,
    ``||I - gamma A||_{Q^{-1}} <= 1 - gamma * lambda_contract``.
    """

    Q: np.ndarray
    lambda_dt: float
    lambda_ct: float
    K: float
    gamma_max: float
    residual: float
    lambda_contract: float = field(default=float("nan"))
    gamma_contract: float = field(default=float("nan"))


def solve_lyapunov(a_bar):
    A = a_bar.entries
    d = a_bar.dim
    _check_hurwitz(a_bar)
    I = np.eye(d)
    Q = solve_sylvester_kron(A, I)
    Q = 0.5 * (Q + Q.T)
    residual = float(np.linalg.norm(A @ Q + Q @ A.T - I))
    if residual > 1e-10 * d * max(1.0, np.linalg.norm(A) * np.linalg.norm(Q)):
        raise SolverDivergence(f"Lyapunov residual {residual:.3e} above tolerance")
    q2 = float(np.linalg.norm(Q, 2))
    lambda_dt = 1.0 / (2.0 * q2 ** 2)
    lambda_ct = 1.0 / (2.0 * q2)
    a_q = weighted_norm(Q, A)
    gamma_max = 1.0 / (2.0 * q2 ** 2 * a_q ** 2)
    P = np.linalg.inv(Q)
    P = 0.5 * (P + P.T)
    a_p = weighted_norm(P, A)
    K = _estimate_K(A, Q, lambda_ct)
    return LyapunovSolution(
        Q=Q, lambda_dt=lambda_dt, lambda_ct=lambda_ct, K=K, gamma_max=gamma_max,
        residual=residual, lambda_contract=1.0 / (4.0 * q2),
        gamma_contract=1.0 / (2.0 * q2 * a_p ** 2),
    )


def k_grid(lambda_ct, n=K_GRID_POINTS):
    return np.concatenate([[0.0], np.logspace(np.log10(1e-3 / lambda_ct),
                                               np.log10(50.0 / lambda_ct), n)])


def _estimate_K(A, Q, lambda_ct):
    t = k_grid(lambda_ct)
    E = scipy.linalg.expm(-A[None, :, :] * t[:, None, None])
    w, V = np.linalg.eigh(Q)
    half = (V * np.sqrt(w)) @ V.T
    inv_half = (V / np.sqrt(w)) @ V.T
    norms = np.linalg.norm(half @ E @ inv_half, ord=2, axis=(1, 2))
    return float(np.max(norms * np.exp(lambda_ct * t)))


@dataclass(frozen=True)
class StationaryCovariance:
    sigma_a: np.ndarray
    gamma_mat: np.ndarray
    residual: float = 0.0


def solve_stationary_covariance(a_bar, gamma_mat):
    """Solve ``A S + S A^T = Gamma`` for the OU stationary covariance."""
    A = a_bar.entries
    d = a_bar.dim
    G = np.atleast_2d(np.asarray(gamma_mat, dtype=float))
    if G.shape != (d, d):
        raise ValueError(f"Gamma shape {G.shape} does not match drift dim {d}")
    _check_hurwitz(a_bar)
    G = 0.5 * (G + G.T)
    if np.linalg.eigvalsh(G).min() < -1e-10:
        raise NotPSD("input covariance Gamma is not PSD")
    S = solve_sylvester_kron(A, G)
    S = 0.5 * (S + S.T)
    residual = float(np.linalg.norm(A @ S + S @ A.T - G))
    if residual > 1e-10 * d * max(1.0, np.linalg.norm(G), np.linalg.norm(A) * np.linalg.norm(S)):
        raise SolverDivergence(f"stationary covariance residual {residual:.3e}")
    if np.linalg.eigvalsh(S).min() < -1e-10 * max(1.0, np.linalg.norm(S)):
        raise NotPSD("stationary covariance came out indefinite")
    return StationaryCovariance(sigma_a=S, gamma_mat=G, residual=residual)
