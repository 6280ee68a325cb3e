"""Exact W1 between the law of y_k and its Gaussian limit for scalar additive LSA.

With additive Gaussian noise and a deterministic start, y_k is exactly
N(0, v_k), and W1(N(0, v), N(0, s)) = |sqrt(v) - sqrt(s)| sqrt(2/pi). The
table shows how small the signal is at large k next to the Monte Carlo
resolution of a finite ensemble.
"""
import argparse
import math

import numpy as np

from sa_lab.engine import StepSchedule, exact_lsa_second_moment
from sa_lab.experiments import quantile_cloud
from sa_lab.transport import wasserstein_1d


def profile(gamma1, a, A, noise_var, ks):
    sched = StepSchedule(gamma1, a)
    ks = np.asarray(sorted(ks))
    v = np.array([m[0, 0] for m in exact_lsa_second_moment(
        np.array([[A]]), np.array([[noise_var]]), sched, int(ks[-1]), np.zeros(1), ks)])
    limit = noise_var / (2 * A - (1 / gamma1 if a == 1 else 0.0))
    w1 = np.abs(np.sqrt(v) - math.sqrt(limit)) * math.sqrt(2 / math.pi)
    return ks, sched.gamma(ks), w1


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma1", type=float, default=1.0)
    ap.add_argument("--a", type=float, default=0.8)
    ap.add_argument("--A", type=float, default=1.0)
    ap.add_argument("--noise-var", type=float, default=2.0)
    ap.add_argument("--ensemble", type=int, default=10_000)
    ap.add_argument("--ks", default="3,10,30,100,300,1000,3000,10000,100000,1000000")
    args = ap.parse_args(argv)
    ks, g, w1 = profile(args.gamma1, args.a, args.A, args.noise_var,
                        [int(k) for k in args.ks.split(",")])
    limit = args.noise_var / (2 * args.A - (1 / args.gamma1 if args.a == 1 else 0.0))
    ref = quantile_cloud(args.ensemble, limit)[:, 0]
    gen = np.random.default_rng(0)
    floor = np.mean([wasserstein_1d(math.sqrt(limit) * gen.standard_normal(args.ensemble), ref).value
                     for _ in range(50)])
    print(f"{'k':>9} {'gamma_k':>10} {'W1':>9} {'local slope':>12}")
    for i, k in enumerate(ks):
        slope = "" if i == 0 else f"{math.log(w1[i] / w1[i - 1]) / math.log(g[i] / g[i - 1]):.3f}"
        print(f"{k:>9d} {g[i]:>10.3e} {w1[i]:>9.4f} {slope:>12}")
    print(f"mean same-law W1 to the quantile reference at n = {args.ensemble}: {floor:.4f}")


if __name__ == "__main__":
    run()
