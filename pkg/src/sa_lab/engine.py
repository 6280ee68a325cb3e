"""Stochastic-approximation engine.

Runs ``x_{k+1} = x_k - gamma_k (f(x_k, xi_k) + W_k)`` over seeded ensembles and
computes the derived objects (scaled errors, PR averages, block sums,
remainder terms) from the stored paths.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePartition, MissingPath, NumericalBlowup, SingularGamma
from .noise import NoiseStreams, martingale_increments, solve_poisson, stationary_distribution
from .spectral import DriftMatrix, psd_sqrt, solve_lyapunov, weighted_norm

# Fixed batch geometry: float results must not depend on the worker count.
TRAJ_BATCH = 8192
STEP_CHUNK = 1024
BLOWUP = 1e12


@dataclass(frozen=True)
class StepSchedule:
    gamma1: float
    a: float

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ValueError("gamma1 must be positive")
        if not 0 < self.a <= 1:
            raise ValueError("step exponent a must lie in (0, 1]")

    def gamma(self, k):
        k = np.asarray(k, dtype=float)
        return self.gamma1 * k ** (-self.a)

    def block_step(self, k_start, k_stop):
        """Sum of gamma_k for k_start <= k < k_stop, by direct summation."""
        return float(np.sum(self.gamma(np.arange(k_start, k_stop))))

    def drift(self, grad_f_bar_at_star):
        return DriftMatrix.from_jacobian(grad_f_bar_at_star, self.a, self.gamma1)

    def default_burn_in(self, lambda_dt):
        if self.a < 1:
            return 0
        # smallest n with gamma_n * lambda_dt < 1
        return int(math.floor(self.gamma1 * lambda_dt)) + 1


@dataclass(frozen=True)
class ProblemSpec:
    """An SA instance.

    ``f`` and ``grad_f`` are vectorised: ``x`` is ``(B, d)`` and ``xi`` an
    integer state array of shape ``(B,)``. ``f_bar`` maps ``(B, d) -> (B, d)``.
    """

    dim: int
    f: object
    grad_f: object
    f_bar: object
    grad_f_bar_at_star: np.ndarray
    x_star: np.ndarray
    name: str = "problem"

    def f_at_star(self, n_states):
        X = np.tile(self.x_star, (n_states, 1))
        return self.f(X, np.arange(n_states))

    def jacobians_at_star(self, n_states):
        X = np.tile(self.x_star, (n_states, 1))
        return self.grad_f(X, np.arange(n_states))

    def check(self, chain):
        fb = self.f_bar(self.x_star[None, :])[0]
        if np.abs(fb).max() > 1e-10:
            raise ValueError(f"{self.name}: f_bar(x*) = {fb} is not zero")
        pi = stationary_distribution(chain)
        mean = pi @ self.f_at_star(chain.n_states)
        if np.abs(mean).max() > 1e-10:
            raise ValueError(f"{self.name}: E_pi f(x*, xi) = {mean} is not zero")


def problem_poisson(problem, chain):
    """Poisson solutions for ``f(x*, .) - f_bar(x*)`` and ``A(.) - E_pi A``."""
    S = chain.n_states
    g = problem.f_at_star(S) - problem.f_bar(problem.x_star[None, :])[0]
    pi = stationary_distribution(chain)
    g = g - pi @ g
    A = problem.jacobians_at_star(S)
    return solve_poisson(chain, g, A - np.tensordot(pi, A, axes=(0, 0)))


@dataclass(frozen=True)
class Partition:
    boundaries: np.ndarray
    lengths: np.ndarray
    block_steps: np.ndarray

    @property
    def n_blocks(self):
        return self.lengths.size

    @property
    def starts(self):
        return self.boundaries[:-1]

    @classmethod
    def from_boundaries(cls, schedule, boundaries):
        b = np.asarray(boundaries, dtype=np.int64)
        lengths = np.diff(b)
        steps = np.array([schedule.block_step(s, e) for s, e in zip(b[:-1], b[1:])])
        return cls(b, lengths, steps)

    def check(self, schedule):
        """Partition invariants: positive nondecreasing lengths, shrinking I*gamma."""
        ok = bool(np.all(self.lengths >= 1) and np.all(np.diff(self.lengths) >= 0))
        ig = self.lengths * schedule.gamma(self.starts)
        return ok and bool(ig[-1] < ig[0])


def make_partition(schedule, n, c=1.0):
    """Greedy blocks ``I_m = max(1, ceil(c * gamma_{k_m}^{-2/3}))`` from ``k_1 = 1``.

    A final residual shorter than the previous block is merged into it so
    that the lengths stay nondecreasing and the last boundary equals ``n``.
    """
    if n < 4:
        raise DegeneratePartition("horizon must be at least 4")
    bounds = [1]
    while True:
        k = bounds[-1]
        I = max(1, math.ceil(c * float(schedule.gamma(k)) ** (-2.0 / 3.0)))
        if k + I > n:
            break
        bounds.append(k + I)
    if bounds[-1] < n:
        residual = n - bounds[-1]
        prev = bounds[-1] - bounds[-2] if len(bounds) > 1 else 0
        if len(bounds) > 1 and residual < prev:
            bounds[-1] = n
        else:
            bounds.append(n)
    if len(bounds) < 3:
        raise DegeneratePartition(
            f"partition with c={c} fits fewer than two blocks in horizon {n}")
    return Partition.from_boundaries(schedule, bounds)


def scaled_error(schedule, x_k, k, x_star):
    return (np.asarray(x_k, dtype=float) - x_star) / np.sqrt(schedule.gamma(k))


@dataclass
class TrajectoryEnsemble:
    n_traj: int
    horizon: int
    checkpoints: np.ndarray
    x: np.ndarray          # (n_cp, n_traj, d)
    xbar: np.ndarray       # (n_cp, n_traj, d), Kahan-compensated running means
    x_star: np.ndarray
    schedule: StepSchedule
    burn_in: int = 0
    paths: dict = None     # x (n_traj, n, d); xi, w, m (n_traj, n-1, ...)
    poisson: object = None

    @property
    def y(self):
        g = self.schedule.gamma(self.checkpoints)[:, None, None]
        return (self.x - self.x_star) / np.sqrt(g)

    @property
    def ybar(self):
        return np.sqrt(self.checkpoints.astype(float))[:, None, None] * (self.xbar - self.x_star)

    def index(self, k):
        hits = np.nonzero(self.checkpoints == k)[0]
        if hits.size == 0:
            raise KeyError(f"checkpoint {k} not recorded")
        return int(hits[0])

    def flagged(self):
        """Checkpoints that fall inside the burn-in window."""
        return self.checkpoints < self.burn_in

    def require_paths(self):
        if self.paths is None:
            raise MissingPath("ensemble was run without retain_paths=True")
        return self.paths


def _simulate_batch(problem, chain, mds, schedule, horizon, seed, traj, cps, x1, retain):
    B = traj.size
    d = problem.dim
    streams = NoiseStreams(chain, mds, seed, traj)
    x = np.array(np.broadcast_to(x1, (B, d)), dtype=float)
    s = np.zeros((B, d))
    comp = np.zeros((B, d))
    cp_index = {int(k): i for i, k in enumerate(cps)}
    xs = np.empty((len(cps), B, d))
    xbars = np.empty((len(cps), B, d))
    if retain:
        px = np.empty((B, horizon, d))
        pxi = np.empty((B, horizon - 1), dtype=np.int64)
        pw = np.empty((B, horizon - 1, d))
    gam = schedule.gamma(np.arange(1, horizon + 1))
    k = 1
    while True:
        # Kahan-compensated running sum of x_1..x_k
        yk = x - comp
        t = s + yk
        comp = (t - s) - yk
        s = t
        if retain:
            px[:, k - 1] = x
        i = cp_index.get(k)
        if i is not None:
            xs[i] = x
            xbars[i] = s / k
        if k == horizon:
            break
        if (k - 1) % STEP_CHUNK == 0:
            T = min(STEP_CHUNK, horizon - k)
            xi_c, w_c = streams.next_chunk(T, time_major=True)
            if retain:
                pxi[:, k - 1:k - 1 + T] = xi_c.T
                pw[:, k - 1:k - 1 + T] = w_c.transpose(1, 0, 2)
            base = k
        j = k - base
        x = x - gam[k - 1] * (problem.f(x, xi_c[j]) + w_c[j])
        k += 1
        if k % 64 == 0 or k == horizon:
            bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP)
            if bad.any():
                b = int(np.nonzero(bad.any(axis=1))[0][0])
                raise NumericalBlowup(
                    f"trajectory {int(traj[b])} exceeded |x| > {BLOWUP:g} by step {k}",
                    trajectory=int(traj[b]), step=k)
    out = {"x": xs, "xbar": xbars}
    if retain:
        out.update(px=px, pxi=pxi, pw=pw)
    return out


def resolve_threads(threads=None):
    """Worker count from an int, ``"auto"``, or ``None`` (env ``SA_LAB_THREADS``, else 1)."""
    if threads is None:
        threads = os.environ.get("SA_LAB_THREADS", 1)
    if threads == "auto":
        return os.cpu_count() or 1
    return max(1, int(threads))


def run_sa(problem, chain, mds, schedule, horizon, seed, checkpoints, n_traj=1, x1=None,
           retain_paths=False, threads=1, burn_in=None, traj_offset=0):
    """Simulate ``n_traj`` independent SA trajectories up to iterate ``x_horizon``.

    Trajectory ``i`` uses noise keyed by ``(seed, traj_offset + i)``; batches
    of ``TRAJ_BATCH`` trajectories are farmed out to ``threads`` workers and
    reassembled in index order.
    """
    cps = np.unique(np.asarray(checkpoints, dtype=np.int64))
    if cps.size == 0 or cps[0] < 1 or cps[-1] > horizon:
        raise ValueError(f"checkpoints must lie in [1, {horizon}]")
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    d = problem.dim
    x1 = problem.x_star.copy() if x1 is None else np.asarray(x1, dtype=float).reshape(d)
    traj = np.arange(n_traj, dtype=np.int64) + traj_offset
    batches = [traj[i:i + TRAJ_BATCH] for i in range(0, n_traj, TRAJ_BATCH)]
    job = lambda tb: _simulate_batch(problem, chain, mds, schedule, horizon, seed, tb,
                                     cps, x1, retain_paths)
    workers = resolve_threads(threads)
    if workers == 1 or len(batches) == 1:
        results = [job(tb) for tb in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, batches))
    x = np.concatenate([r["x"] for r in results], axis=1)
    xbar = np.concatenate([r["xbar"] for r in results], axis=1)
    if burn_in is None:
        lam = solve_lyapunov(schedule.drift(problem.grad_f_bar_at_star)).lambda_dt
        burn_in = schedule.default_burn_in(lam)
    ens = TrajectoryEnsemble(n_traj=n_traj, horizon=horizon, checkpoints=cps, x=x,
                             xbar=xbar, x_star=problem.x_star.copy(), schedule=schedule,
                             burn_in=burn_in)
    if retain_paths:
        poisson = problem_poisson(problem, chain)
        xi = np.concatenate([r["pxi"] for r in results], axis=0)
        w = np.concatenate([r["pw"] for r in results], axis=0)
        ens.paths = {
            "x": np.concatenate([r["px"] for r in results], axis=0),
            "xi": xi, "w": w,
            "m": martingale_increments(chain, poisson, xi, w),
        }
        ens.poisson = poisson
    return ens


def _inv_sqrt(mat):
    G = np.atleast_2d(mat)
    w = np.linalg.eigvalsh(0.5 * (G + G.T))
    if w.min() < 1e-12:
        raise SingularGamma(f"Gamma has eigenvalue {w.min():.3e} < 1e-12")
    return np.linalg.inv(psd_sqrt(G))


@dataclass
class BlockSums:
    z_hat: np.ndarray   # (n_traj, N, d) weighted, normalised sums
    s: np.ndarray       # (n_traj, N, d) unweighted, normalised sums
    raw_weighted: np.ndarray  # (n_traj, N, d) sum of sqrt(gamma_k) M_k


def block_sums(ensemble, partition, gamma_mat):
    m = ensemble.require_paths()["m"]
    if partition.boundaries[-1] != m.shape[1] + 1:
        raise ValueError(f"partition ends at {partition.boundaries[-1]}, path needs {m.shape[1] + 1}")
    G = np.atleast_2d(gamma_mat)
    Gi = _inv_sqrt(G)
    starts = partition.starts - 1
    g = ensemble.schedule.gamma(np.arange(1, m.shape[1] + 1))
    weighted = np.add.reduceat(np.sqrt(g)[None, :, None] * m, starts, axis=1)
    plain = np.add.reduceat(m, starts, axis=1)
    H = partition.block_steps[None, :, None]
    I = partition.lengths[None, :, None].astype(float)
    z_hat = (weighted / np.sqrt(H)) @ Gi.T
    s = (plain / np.sqrt(I)) @ Gi.T
    return BlockSums(z_hat=z_hat, s=s, raw_weighted=weighted)


def compute_eka(schedule, grad_f_bar_at_star, a_bar, k, Q=None):
    """Weighted norm of ``sqrt(g_k/g_{k+1})(I - g_k J) - (I - g_k A_a)``.

    Evaluated as ``(r-1) I - g_k (r-1) J - g_k (J - A_a)`` with
    ``r - 1 = expm1(a/2 * log1p(1/k))`` to avoid cancellation at large k.
    """
    J = np.atleast_2d(grad_f_bar_at_star)
    A = a_bar.entries
    if Q is None:
        Q = solve_lyapunov(a_bar).Q
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.empty(ks.size)
    I = np.eye(J.shape[0])
    for i, kk in enumerate(ks):
        if kk < 1:
            raise ValueError("k must be >= 1")
        rm1 = math.expm1(0.5 * schedule.a * math.log1p(1.0 / kk))
        gk = float(schedule.gamma(kk))
        D = rm1 * I - gk * rm1 * J - gk * (J - A)
        out[i] = weighted_norm(Q, D)
    return out if np.ndim(k) else float(out[0])


@dataclass
class RemainderDecomposition:
    """Signed contributions of the per-step remainder terms.

    ``terms[name]`` has shape ``(n_traj, n-1, d)`` and enters the remainder
    with the sign already applied: ``R_k = a + b + c + d + e``.
    """

    terms: dict
    block_f: np.ndarray        # (n_traj, N, d)
    r_tilde: np.ndarray        # (n_traj, N, d)
    step_identity_error: float
    block_identity_error: float


def decompose_remainder(ensemble, problem, chain, poisson, partition, a_bar=None):
    paths = ensemble.require_paths()
    sched = ensemble.schedule
    X = paths["x"]
    xi = paths["xi"]
    M = paths["m"]
    nt, n, d = X.shape
    k = np.arange(1, n, dtype=float)
    g = sched.gamma(k)
    g1 = sched.gamma(k + 1)
    J = np.atleast_2d(problem.grad_f_bar_at_star)
    A = (a_bar or sched.drift(J)).entries
    xs = problem.x_star
    Y = (X - xs) / np.sqrt(sched.gamma(np.arange(1, n + 1)))[None, :, None]
    yk = Y[:, :-1]
    r = np.sqrt(g / g1)
    coef = (g / np.sqrt(g1))[None, :, None]
    # (a): [r (I - g J) - (I - g A)] y_k
    ta = (r[:, None, None] - 1) * np.eye(d) - g[:, None, None] * (r[:, None, None] * J - A)
    term_a = np.einsum("kij,tkj->tki", ta, yk)
    xk = X[:, :-1].reshape(-1, d)
    dx = xk - xs
    fbar_k = problem.f_bar(xk)
    taylor = fbar_k - dx @ J.T
    term_b = -coef * taylor.reshape(nt, n - 1, d)
    term_c = (np.sqrt(g) * (r - 1))[None, :, None] * M
    phi = np.asarray(poisson.phi).reshape(chain.n_states, -1)
    pphi = chain.transition @ phi
    prev = np.empty((nt, n - 1, d))
    prev[:, 0] = chain.initial @ phi
    prev[:, 1:] = pphi[xi[:, :-1]]
    term_d = -coef * (prev - pphi[xi])
    st = xi.reshape(-1)
    f_k = problem.f(xk, st)
    f_s = problem.f(np.broadcast_to(xs, xk.shape).copy(), st)
    fbar_s = problem.f_bar(xs[None, :])[0]
    gdiff = (f_k - fbar_k) - (f_s - fbar_s)
    term_e = -coef * gdiff.reshape(nt, n - 1, d)
    terms = {"a": term_a, "b": term_b, "c": term_c, "d": term_d, "e": term_e}
    R = term_a + term_b + term_c + term_d + term_e
    lhs = Y[:, 1:] - (yk - g[None, :, None] * (yk @ A.T) + np.sqrt(g)[None, :, None] * M)
    scale = np.maximum(1.0, np.abs(Y[:, 1:]))
    step_err = float(np.max(np.abs(lhs - R) / scale))
    starts = partition.starts - 1
    stops = partition.boundaries[1:] - 1
    gy = g[None, :, None] * (yk @ A.T)
    H = partition.block_steps[None, :, None]
    y_start = Y[:, starts]
    block_f = H * (y_start @ A.T) - np.add.reduceat(gy, starts, axis=1)
    r_tilde = np.add.reduceat(R, starts, axis=1) + block_f
    noise = np.add.reduceat(np.sqrt(g)[None, :, None] * M, starts, axis=1)
    pred = y_start - H * (y_start @ A.T) + noise + r_tilde
    block_err = float(np.max(np.abs(Y[:, stops] - pred) / np.maximum(1.0, np.abs(Y[:, stops]))))
    return RemainderDecomposition(terms=terms, block_f=block_f, r_tilde=r_tilde,
                                  step_identity_error=step_err,
                                  block_identity_error=block_err)


@dataclass
class CovarianceEstimate:
    k: int
    moment: np.ndarray   # E[y y^T]
    se: np.ndarray       # jackknife standard errors, elementwise


def track_scaled_covariance(ensemble, checkpoints=None, which="y"):
    """Second-moment matrices of the scaled errors with jackknife errors.

    For a sample mean the delete-one jackknife standard error equals
    ``std(ddof=1)/sqrt(n)`` of the per-trajectory products, used here directly.
    """
    Y = ensemble.y if which == "y" else ensemble.ybar
    cps = ensemble.checkpoints if checkpoints is None else np.asarray(checkpoints)
    out = []
    for k in cps:
        yk = Y[ensemble.index(int(k))]
        n = yk.shape[0]
        if yk.shape[1] > 16:
            raise ValueError("dense covariance tracking limited to d <= 16")
        prods = yk[:, :, None] * yk[:, None, :]
        mom = prods.mean(axis=0)
        se = prods.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mom)
        out.append(CovarianceEstimate(k=int(k), moment=mom, se=se))
    return out


def exact_lsa_second_moment(A, gamma_w, schedule, horizon, x1, checkpoints):
    """Deterministic recursion ``S_{k+1} = (I - g A) S (I - g A)^T + g^2 Gamma^W``.

    Exact second moment of ``x_k - x*`` for linear SA with additive MDS noise
    and constant Jacobian; returns ``Sigma^y_k = S_k / g_k`` at checkpoints.
    """
    A = np.atleast_2d(A)
    d = A.shape[0]
    Gw = np.atleast_2d(gamma_w)
    e = np.asarray(x1, dtype=float).reshape(d)
    S = np.outer(e, e)
    want = {int(k) for k in checkpoints}
    out = {}
    I = np.eye(d)
    for k in range(1, horizon + 1):
        gk = schedule.gamma1 * k ** (-schedule.a)
        if k in want:
            out[k] = S / gk
        B = I - gk * A
        S = B @ S @ B.T + gk * gk * Gw
    return [out[int(k)] for k in checkpoints]
