"""Ornstein-Uhlenbeck reference process ``dU = -A U dt + sqrt(Gamma) dB``."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import rng
from .errors import StepTooLarge
from .spectral import (DriftMatrix, StationaryCovariance, psd_sqrt, solve_lyapunov,
                       solve_stationary_covariance, solve_sylvester_kron)


@dataclass(frozen=True)
class OUSpec:
    a_bar: DriftMatrix
    gamma_mat: np.ndarray
    sigma_a: StationaryCovariance
    lambda_dt: float

    @classmethod
    def build(cls, a_bar, gamma_mat):
        if not isinstance(a_bar, DriftMatrix):
            a_bar = DriftMatrix(a_bar)
        cov = solve_stationary_covariance(a_bar, gamma_mat)
        lam = solve_lyapunov(a_bar).lambda_dt
        return cls(a_bar=a_bar, gamma_mat=cov.gamma_mat, sigma_a=cov, lambda_dt=lam)

    @property
    def dim(self):
        return self.a_bar.dim


@dataclass(frozen=True)
class Transition:
    """Exact transition over a step ``h``: ``U_h = E u + C^{1/2} z``."""

    mean_map: np.ndarray
    cov: np.ndarray
    root: np.ndarray


def ou_transition(spec, h):
    if not h > 0:
        raise ValueError("step h must be positive")
    A = spec.a_bar.entries
    G = spec.gamma_mat
    E = scipy.linalg.expm(-A * h)
    # A C + C A^T = Gamma - E Gamma E^T characterises the integral covariance
    C = solve_sylvester_kron(A, G - E @ G @ E.T)
    C = 0.5 * (C + C.T)
    return Transition(mean_map=E, cov=C, root=psd_sqrt(C))


def ou_exact_step(spec, u, h, z, transition=None):
    """Rows of ``u`` and ``z`` are independent states and standard normals."""
    tr = transition or ou_transition(spec, h)
    return np.asarray(u) @ tr.mean_map.T + np.asarray(z) @ tr.root.T


def ou_discrete_step(spec, u, h, z):
    """Euler-Maruyama step ``u - h A u + sqrt(h Gamma) z``."""
    if h * spec.lambda_dt >= 1:
        raise StepTooLarge(f"h * lambda_DT = {h * spec.lambda_dt:.3g} >= 1")
    A = spec.a_bar.entries
    u = np.asarray(u, dtype=float)
    return u - h * (u @ A.T) + np.asarray(z) @ psd_sqrt(h * spec.gamma_mat).T


@dataclass
class CoupledPaths:
    """Synchronised Euler-Maruyama and exact OU paths on block times.

    ``u`` and ``u_exact`` are the terminal states ``(n_traj, d)``; ``tau`` the
    interpolation times. Full paths ``(N+1, n_traj, d)`` when requested.
    """

    u: np.ndarray
    u_exact: np.ndarray
    tau: np.ndarray
    path_u: np.ndarray = None
    path_exact: np.ndarray = None

    @property
    def gap(self):
        return self.u - self.u_exact

    def l2_gap(self):
        return float(np.sqrt(np.mean(np.sum(self.gap ** 2, axis=1))))


def coupled_paths(spec, partition, n_traj, seed, u0=None, keep_path=False, traj_offset=0):
    """Drive both schemes with the same ``z_m``; ``partition`` may be a Partition or step array."""
    steps = np.asarray(getattr(partition, "block_steps", partition), dtype=float)
    d = spec.dim
    N = steps.size
    z = np.empty((N, n_traj, d))
    for i in range(n_traj):
        z[:, i] = rng.stream(seed, traj_offset + i, rng.GAUSS).standard_normal((N, d))
    u = np.zeros((n_traj, d)) if u0 is None else np.array(np.broadcast_to(u0, (n_traj, d)), float)
    ue = u.copy()
    tau = np.concatenate([[0.0], np.cumsum(steps)])
    if keep_path:
        pu = np.empty((N + 1, n_traj, d))
        pe = np.empty((N + 1, n_traj, d))
        pu[0] = u
        pe[0] = ue
    cache = {}
    for m, h in enumerate(steps):
        tr = cache.get(h)
        if tr is None:
            tr = cache[h] = ou_transition(spec, h)
        u = ou_discrete_step(spec, u, h, z[m])
        ue = ou_exact_step(spec, ue, h, z[m], transition=tr)
        if keep_path:
            pu[m + 1] = u
            pe[m + 1] = ue
    out = CoupledPaths(u=u, u_exact=ue, tau=tau)
    if keep_path:
        out.path_u, out.path_exact = pu, pe
    return out


def discrete_covariance(spec, steps, sigma0=None):
    """Exact second-moment recursion of the Euler-Maruyama chain."""
    A = spec.a_bar.entries
    d = spec.dim
    S = np.zeros((d, d)) if sigma0 is None else np.array(sigma0, dtype=float)
    I = np.eye(d)
    for h in np.asarray(steps, dtype=float):
        B = I - h * A
        S = B @ S @ B.T + h * spec.gamma_mat
    return S


def exact_covariance(spec, t, sigma0=None):
    """Covariance of ``U_t`` started from a law with covariance ``sigma0``."""
    d = spec.dim
    S0 = np.zeros((d, d)) if sigma0 is None else np.asarray(sigma0, dtype=float)
    tr = ou_transition(spec, t)
    return tr.mean_map @ S0 @ tr.mean_map.T + tr.cov


def sample_stationary(spec, n_samples, seed):
    from .transport import EmpiricalMeasure
    z = rng.stream(seed, 0, rng.GAUSS).standard_normal((n_samples, spec.dim))
    return EmpiricalMeasure(z @ psd_sqrt(spec.sigma_a.sigma_a).T)
