"""Concrete SA instances and the canonical fixtures."""
import numpy as np
from scipy.optimize import brentq

from .engine import ProblemSpec
from .noise import MarkovChainSpec, MDSSpec, stationary_distribution


class LinearOperator:
    """``f(x, s) = A_s x - b_s`` with per-state matrices."""

    def __init__(self, A_states, b_states):
        self.A = np.asarray(A_states, dtype=float)
        self.b = np.asarray(b_states, dtype=float)
        self.d = self.A.shape[1]
        self.shared = bool(np.all(self.A == self.A[0]))
        self.const_b = bool(np.all(self.b == self.b[0]))

    def f(self, x, xi):
        if self.shared and self.const_b:
            if self.d == 1:
                return x * self.A[0, 0, 0] - self.b[0]
            return x @ self.A[0].T - self.b[0]
        if self.d == 1:
            return x * self.A[xi, 0, :1] - self.b[xi]
        if self.shared:
            return x @ self.A[0].T - self.b[xi]
        return np.einsum("bij,bj->bi", self.A[xi], x) - self.b[xi]

    def grad_f(self, x, xi):
        return self.A[np.asarray(xi)]


class MeanLinear:
    def __init__(self, A, b):
        self.A = A
        self.b = b

    def __call__(self, x):
        return x @ self.A.T - self.b


def linear_problem(A_states, b_states, chain, name="lsa"):
    """Linear SA; ``x*`` solves ``E_pi A x = E_pi b``."""
    A_states = np.asarray(A_states, dtype=float)
    S = chain.n_states
    if A_states.ndim == 2:
        A_states = np.broadcast_to(A_states, (S,) + A_states.shape).copy()
    b_states = np.asarray(b_states, dtype=float)
    if b_states.ndim == 1:
        b_states = np.broadcast_to(b_states, (S, b_states.size)).copy()
    pi = stationary_distribution(chain)
    A_bar = np.tensordot(pi, A_states, axes=(0, 0))
    b_bar = pi @ b_states
    x_star = np.linalg.solve(A_bar, b_bar)
    op = LinearOperator(A_states, b_states)
    return ProblemSpec(dim=A_bar.shape[0], f=op.f, grad_f=op.grad_f,
                       f_bar=MeanLinear(A_bar, b_bar), grad_f_bar_at_star=A_bar,
                       x_star=x_star, name=name)


class TanhOperator:
    """Scalar ``f(x, s) = mu (x - c_s) + tanh(x - c_s)``; strongly monotone with modulus mu."""

    def __init__(self, mu, centers, pi):
        self.mu = float(mu)
        self.c = np.asarray(centers, dtype=float)
        self.pi = pi

    def f(self, x, xi):
        u = x - self.c[xi][:, None]
        return self.mu * u + np.tanh(u)

    def grad_f(self, x, xi):
        u = x - self.c[np.asarray(xi)][:, None]
        return (self.mu + 1.0 / np.cosh(u) ** 2)[:, :, None]

    def f_bar(self, x):
        u = x[:, :, None] - self.c[None, None, :]
        return (self.mu * u + np.tanh(u)) @ self.pi

    def root(self):
        g = lambda t: float(self.f_bar(np.array([[t]]))[0, 0])
        lo, hi = self.c.min() - 1.0, self.c.max() + 1.0
        return brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def tanh_sgd_problem(mu, centers, chain, name="sgd_tanh"):
    pi = stationary_distribution(chain)
    op = TanhOperator(mu, centers, pi)
    xs = op.root()
    J = np.array([[float(pi @ (mu + 1.0 / np.cosh(xs - op.c) ** 2))]])
    return ProblemSpec(dim=1, f=op.f, grad_f=op.grad_f, f_bar=op.f_bar,
                       grad_f_bar_at_star=J, x_star=np.array([xs]), name=name)


def quadratic_sgd_problem(H, centers, chain, name="sgd_quadratic"):
    """Gradient of ``0.5 (x - c_s)^T H (x - c_s)``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(centers, dtype=float).reshape(chain.n_states, -1)
    return linear_problem(H, c @ H.T, chain, name=name)


def build_problem(spec, chain):
    """Problem from its config section."""
    kind = spec["kind"]
    if kind == "linear":
        return linear_problem(spec["A"], spec["b"], chain)
    if kind == "multiplicative":
        a0, c = float(spec["A"]), float(spec["c"])
        chain_states = chain.n_states
        if chain_states != 2:
            raise ValueError("multiplicative LSA needs a two-state chain")
        return linear_problem([[[a0 - c]], [[a0 + c]]], [[0.0], [0.0]], chain,
                              name="lsa_multiplicative")
    if kind == "quadratic":
        return quadratic_sgd_problem(spec["H"], spec["centers"], chain)
    if kind == "tanh":
        return tanh_sgd_problem(spec["mu"], spec["centers"], chain)
    raise ValueError(f"unknown problem kind {kind!r}")


def build_chain(spec):
    kind = spec.get("kind", "markov")
    if kind == "single":
        return MarkovChainSpec.single_state()
    if kind == "iid":
        return MarkovChainSpec.iid(spec["probs"])
    P = np.asarray(spec["transition"], dtype=float)
    init = spec.get("initial")
    init = np.full(P.shape[0], 1.0 / P.shape[0]) if init is None else np.asarray(init, float)
    return MarkovChainSpec(P, init)


def build_mds(spec):
    return MDSSpec(kind=spec["kind"], covariance=np.atleast_2d(spec["covariance"]),
                   moment_order=spec.get("moment_order", 2), dof=spec.get("dof"))
