"""Reproducible random substreams.

Every random draw in the package comes from a Philox (counter-based)
generator keyed by ``(seed, operation id, trial id)``, so operations never
share state and results do not depend on call order.
"""

import numpy as np

# Stable operation ids. Never renumber: doing so changes every output.
OP_SOI = 1
OP_INTERFERENCE = 2
OP_DETECTOR = 3
OP_DETECTOR_SWEEP = 4
OP_TRIAL_SEED = 5
OP_ANGLES = 6

_U64 = (1 << 64) - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed, op, trial=0):
    """Return an independent ``numpy.random.Generator`` for one operation."""
    ss = np.random.SeedSequence([check_seed(seed), int(op), int(trial)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, op, index):
    """Derive a child 64-bit seed, e.g. for the ``index``-th Monte-Carlo trial."""
    ss = np.random.SeedSequence([check_seed(seed), int(op), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
