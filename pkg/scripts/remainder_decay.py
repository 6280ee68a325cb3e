"""L2 size of the block remainder against gamma at block starts (scalar LSA)."""
import argparse

import numpy as np

from sa_lab.engine import StepSchedule, decompose_remainder, make_partition, run_sa
from sa_lab.experiments import fit_rate
from sa_lab.noise import MarkovChainSpec, MDSSpec
from sa_lab.problems import linear_problem


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--a", type=float, default=0.8)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--ensemble", type=int, default=200)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    chain = MarkovChainSpec.single_state()
    prob = linear_problem([[1.0]], [0.0], chain)
    s = StepSchedule(1.0, args.a)
    ens = run_sa(prob, chain, MDSSpec("gaussian_iid", [[2.0]]), s, args.steps, args.seed,
                 [args.steps], n_traj=args.ensemble, retain_paths=True)
    part = make_partition(s, args.steps, args.c)
    dec = decompose_remainder(ens, prob, chain, ens.poisson, part)
    l2 = np.sqrt(np.mean(dec.r_tilde[..., 0] ** 2, axis=0))
    use = part.starts >= 10
    use[-1] = False
    fit = fit_rate(s.gamma(part.starts)[use], l2[use])
    print(f"{part.n_blocks} blocks; slope of ||R~_m|| vs gamma_k_m = {fit.slope:.3f}")
    print(f"step identity error {dec.step_identity_error:.1e}, "
          f"block identity error {dec.block_identity_error:.1e}")


if __name__ == "__main__":
    run()
