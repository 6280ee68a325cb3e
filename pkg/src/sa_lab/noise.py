"""Driving noise: finite Markov chains, Poisson solutions, MDS construction.

Conventions used throughout the package:

* ``xi_1`` is drawn from ``chain.initial``; ``xi_{k+1} ~ P(xi_k, .)``.
* The martingale increment is ``M_k = -[Phi(xi_k) - (P Phi)(xi_{k-1})] - W_k``.
  For ``k = 1`` the predecessor term ``(P Phi)(xi_0)`` is read as
  ``E[Phi(xi_1)] = initial @ Phi``, which keeps ``M_1`` mean zero.
"""
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import NotCentered, NotPSD, Reducible, SingularSystem
from .spectral import psd_sqrt

MDS_KINDS = ("gaussian_iid", "bounded_iid", "scaled_student_t")
_TILE = 64


@dataclass(frozen=True)
class MarkovChainSpec:
    transition: np.ndarray
    initial: np.ndarray
    state_values: np.ndarray = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.transition, dtype=float))
        S = P.shape[0]
        if P.shape != (S, S):
            raise ValueError(f"transition must be square, got {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition matrix must be row-stochastic")
        mu = np.asarray(self.initial, dtype=float).reshape(-1)
        if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise ValueError("initial must be a probability vector over the states")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial", mu)
        if self.state_values is not None:
            v = np.asarray(self.state_values, dtype=float)
            if v.shape[0] != S:
                raise ValueError("state_values must have one payload per state")
            object.__setattr__(self, "state_values", v)

    @property
    def n_states(self):
        return self.transition.shape[0]

    def is_primitive(self):
        # Wielandt: a nonnegative S x S matrix is primitive iff P^((S-1)^2+1) > 0
        S = self.n_states
        B = (self.transition > 0).astype(float)
        e = (S - 1) ** 2 + 1
        R = np.eye(S)
        while e:
            if e & 1:
                R = np.minimum(R @ B, 1.0)
            B = np.minimum(B @ B, 1.0)
            e >>= 1
        return bool(np.all(R > 0))

    def is_iid(self):
        P = self.transition
        return bool(np.all(P == P[0]))

    @classmethod
    def single_state(cls, payload=None):
        vals = None if payload is None else np.asarray(payload, dtype=float)[None]
        return cls(np.ones((1, 1)), np.ones(1), vals)

    @classmethod
    def iid(cls, probs, state_values=None):
        p = np.asarray(probs, dtype=float)
        return cls(np.tile(p, (p.size, 1)), p.copy(), state_values)


@dataclass(frozen=True)
class MDSSpec:
    """Additive martingale-difference noise ``W_k``.

    ``scaled_student_t`` draws are rescaled to unit covariance before the
    ``covariance`` square root is applied.
    """

    kind: str
    covariance: np.ndarray
    moment_order: int = 2
    dof: float = None
    root: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.kind not in MDS_KINDS:
            raise ValueError(f"unknown MDS kind {self.kind!r}")
        C = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if C.shape[0] != C.shape[1]:
            raise ValueError("MDS covariance must be square")
        if np.linalg.eigvalsh(0.5 * (C + C.T)).min() < -1e-10:
            raise NotPSD("MDS covariance is not PSD")
        object.__setattr__(self, "covariance", 0.5 * (C + C.T))
        object.__setattr__(self, "root", psd_sqrt(self.covariance))
        if self.kind == "scaled_student_t":
            if self.dof is None:
                raise ValueError("scaled_student_t requires dof")
            if not self.dof > 2 * self.moment_order + 2:
                raise ValueError(
                    f"dof={self.dof} must exceed 2p+2={2 * self.moment_order + 2}")

    @property
    def dim(self):
        return self.covariance.shape[0]

    def draw(self, gen, T):
        """``(T, d)`` increments from one generator."""
        d = self.dim
        if self.kind == "gaussian_iid":
            z = gen.standard_normal((T, d))
        elif self.kind == "bounded_iid":
            z = gen.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(T, d))
        else:
            nu = self.dof
            z = gen.standard_t(nu, size=(T, d)) * np.sqrt((nu - 2.0) / nu)
        if d == 1:
            return z * self.root[0, 0]
        return z @ self.root


@dataclass(frozen=True)
class PoissonSolution:
    """Centered solutions of ``(I - P) Phi = g`` (and of the Jacobian equation)."""

    phi: np.ndarray
    phi_a: np.ndarray = None
    centered: bool = True

    def p_phi(self, chain):
        return np.tensordot(chain.transition, self.phi, axes=(1, 0))


@dataclass(frozen=True)
class AsymptoticCovariance:
    gamma_mat: np.ndarray
    gamma_xi: np.ndarray
    gamma_w: np.ndarray


@dataclass(frozen=True)
class NoiseRealization:
    xi_index: int
    w: np.ndarray
    m: np.ndarray


@dataclass
class NoisePath:
    """One sampled noise trajectory; ``xi[j]``, ``w[j]``, ``m[j]`` are step ``k = j + 1``."""

    xi: np.ndarray
    w: np.ndarray
    m: np.ndarray

    def __len__(self):
        return self.xi.shape[0]

    def __getitem__(self, j):
        return NoiseRealization(int(self.xi[j]), self.w[j], self.m[j])

    def __iter__(self):
        for j in range(len(self)):
            yield self[j]


def _gth(P):
    # Grassmann-Taksar-Heyman state reduction; subtraction-free, so pi > 0 stays positive
    A = np.array(P, dtype=float)
    S = A.shape[0]
    for n in range(S - 1, 0, -1):
        s = A[n, :n].sum()
        if s <= 0:
            raise Reducible(f"state {n} cannot reach lower-indexed states")
        A[:n, n] /= s
        A[:n, :n] += np.outer(A[:n, n], A[n, :n])
    pi = np.zeros(S)
    pi[0] = 1.0
    for n in range(1, S):
        pi[n] = pi[:n] @ A[:n, n]
    return pi / pi.sum()


def stationary_distribution(chain):
    if not chain.is_primitive():
        raise Reducible("chain is not irreducible and aperiodic")
    pi = _gth(chain.transition)
    resid = np.abs(pi @ chain.transition - pi).max()
    if resid > 1e-12:
        raise SingularSystem(f"stationary residual {resid:.3e}")
    return pi


def _solve_centered(chain, pi, g):
    S = chain.n_states
    flat = g.reshape(S, -1)
    mean = pi @ flat
    if np.abs(mean).max() > 1e-10 * max(1.0, np.abs(flat).max()):
        raise NotCentered(f"pi-mean of right-hand side is {mean}")
    Z = np.eye(S) - chain.transition + np.outer(np.ones(S), pi)
    if np.linalg.cond(Z) > 1e12:
        raise SingularSystem("fundamental matrix is numerically singular")
    phi = np.linalg.solve(Z, flat)
    phi -= np.outer(np.ones(S), pi @ phi)
    return phi.reshape(g.shape)


def solve_poisson(chain, g, g_a=None):
    """Centered Poisson solutions for a state function ``g`` (and optional ``g_a``).

    ``g`` has a leading state axis; payloads may be vectors or matrices.
    """
    pi = stationary_distribution(chain)
    g = np.asarray(g, dtype=float)
    phi = _solve_centered(chain, pi, g)
    phi_a = None
    if g_a is not None:
        phi_a = _solve_centered(chain, pi, np.asarray(g_a, dtype=float))
    return PoissonSolution(phi=phi, phi_a=phi_a, centered=True)


def poisson_residual(chain, g, phi):
    S = chain.n_states
    g = np.asarray(g, dtype=float).reshape(S, -1)
    phi = np.asarray(phi, dtype=float).reshape(S, -1)
    return float(np.abs(phi - chain.transition @ phi - g).max())


def asymptotic_gamma(chain, poisson, mds=None):
    pi = stationary_distribution(chain)
    phi = np.asarray(poisson.phi, dtype=float).reshape(chain.n_states, -1)
    d = phi.shape[1]
    pphi = chain.transition @ phi
    diffs = phi[None, :, :] - pphi[:, None, :]          # [s, s', :]
    w = pi[:, None] * chain.transition                  # weight of (s, s')
    gamma_xi = np.einsum("ab,abi,abj->ij", w, diffs, diffs)
    gamma_xi = 0.5 * (gamma_xi + gamma_xi.T)
    gamma_w = np.zeros((d, d)) if mds is None else np.atleast_2d(mds.covariance)
    if gamma_w.shape != (d, d):
        raise ValueError(f"MDS covariance shape {gamma_w.shape} != ({d}, {d})")
    return AsymptoticCovariance(gamma_mat=gamma_xi + gamma_w, gamma_xi=gamma_xi,
                                gamma_w=gamma_w)


class NoiseStreams:
    """Chunked noise generator for a batch of trajectories.

    Each trajectory ``i`` draws chain uniforms from ``stream(seed, i, CHAIN)``
    and MDS increments from ``stream(seed, i, MDS)``; consecutive chunks
    continue the same streams, so output depends only on (seed, i, k).
    """

    def __init__(self, chain, mds, seed, trajectories):
        self.chain = chain
        self.mds = mds
        self.traj = np.asarray(trajectories, dtype=np.int64)
        self.seed = seed
        self._chain_gens = [rng.stream(seed, i, rng.CHAIN) for i in self.traj]
        self._mds_gens = [rng.stream(seed, i, rng.MDS) for i in self.traj]
        self._cum = np.cumsum(chain.transition, axis=1)
        self._cum[:, -1] = 1.0
        self._cum0 = np.cumsum(chain.initial)
        self._cum0[-1] = 1.0
        self._state = None
        self._single = chain.n_states == 1
        self._iid = chain.is_iid()

    def next_chunk(self, T, time_major=False):
        """Return ``xi`` of shape ``(B, T)`` and ``w`` of shape ``(B, T, d)``.

        With ``time_major`` the arrays come back as ``(T, B)`` and ``(T, B, d)``;
        values are identical, only the layout differs.
        """
        B = self.traj.size
        d = self.mds.dim
        w = np.empty((T, B, d)) if time_major else np.empty((B, T, d))
        for j in range(0, B, _TILE):
            gens = self._mds_gens[j:j + _TILE]
            tile = np.stack([self.mds.draw(g, T) for g in gens])
            if time_major:
                w[:, j:j + len(gens)] = tile.transpose(1, 0, 2)
            else:
                w[j:j + len(gens)] = tile
        if self._single:
            xi = np.zeros((T, B) if time_major else (B, T), dtype=np.int64)
            return xi, w
        u = np.empty((B, T))
        for b, g in enumerate(self._chain_gens):
            u[b] = g.random(T)
        if self._iid:
            xi = np.searchsorted(self._cum[0], u, side="right")
            if self._state is None:
                xi[:, 0] = np.searchsorted(self._cum0, u[:, 0], side="right")
        else:
            xi = np.empty((B, T), dtype=np.int64)
            state = self._state
            ut = np.ascontiguousarray(u.T)
            for t in range(T):
                if state is None:
                    state = np.searchsorted(self._cum0, ut[t], side="right")
                else:
                    state = (ut[t][:, None] >= self._cum[state]).sum(axis=1)
                xi[:, t] = state
        np.minimum(xi, self.chain.n_states - 1, out=xi)
        self._state = xi[:, -1].copy()
        if time_major:
            xi = np.ascontiguousarray(xi.T)
        return xi, w


def martingale_increments(chain, poisson, xi, w):
    """``M_k`` for stored paths; ``xi`` is ``(..., n)``, ``w`` is ``(..., n, d)``."""
    phi = np.asarray(poisson.phi, dtype=float).reshape(chain.n_states, -1)
    pphi = chain.transition @ phi
    prev = np.empty(xi.shape + (phi.shape[1],))
    prev[..., 0, :] = chain.initial @ phi
    prev[..., 1:, :] = pphi[xi[..., :-1]]
    return -(phi[xi] - prev) - w


def sample_path(chain, mds, length, seed, poisson=None, trajectory=0):
    """Noise path of ``length`` steps for one trajectory index."""
    streams = NoiseStreams(chain, mds, seed, [trajectory])
    xi, w = streams.next_chunk(length)
    xi, w = xi[0], w[0]
    if poisson is None:
        poisson = PoissonSolution(phi=np.zeros((chain.n_states, mds.dim)))
    m = martingale_increments(chain, poisson, xi, w)
    return NoisePath(xi=xi, w=w, m=m)


def verify_drift_condition(chain, V, step=1e-3):
    """Grid search for ``(rho_V, C_V)`` minimising ``C_V / (1 - rho_V)``."""
    V = np.asarray(V, dtype=float)
    if np.any(V < 1):
        raise ValueError("test function must satisfy V >= 1")
    PV = chain.transition @ V
    rhos = np.arange(0.0, 1.0, step)
    C = (PV[None, :] - rhos[:, None] * V[None, :]).max(axis=1)
    score = C / (1.0 - rhos)
    # C must stay positive for the bound to be a drift condition
    score = np.where(C > 0, score, np.inf)
    i = int(np.argmin(score))
    return float(rhos[i]), float(C[i])
