"""Counter-based random streams.

Every trajectory owns independent Philox streams keyed by
``(master_seed, trajectory_index, stream_id)``; the Philox counter advances
with the step index. Draws for a trajectory therefore never depend on how
trajectories are batched or which worker runs them.
"""
import numpy as np

# stream ids
CHAIN = 0
MDS = 1
GAUSS = 2
AUX = 3


def philox_key(master_seed, index, stream):
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, int(master_seed) >> 32,
                                 int(index), int(stream)])
    return ss.generate_state(2, dtype=np.uint64)


def stream(master_seed, index, stream_id=AUX):
    """Generator for one (seed, index, stream) triple."""
    return np.random.Generator(np.random.Philox(key=philox_key(master_seed, index, stream_id)))


def derive_seed(master_seed, *salt):
    """Derive a child integer seed from a master seed and integer salts."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, int(master_seed) >> 32,
                                 *[int(s) for s in salt]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
