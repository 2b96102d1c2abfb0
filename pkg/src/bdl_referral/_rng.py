"""Named, seeded random streams.

Every source of randomness (initialisation, dropout masks, data order, ...)
gets its own generator derived from ``(seed, stream)`` so that consuming
one stream never shifts another.
"""

import numpy as np

STREAMS = {
    "init": 0,
    "dropout": 1,
    "data": 2,
    "sampling": 3,
    "referral": 4,
    "noise": 5,
    "split": 6,
    "generator": 7,
}


def make_rng(seed, stream):
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng([int(seed), STREAMS[stream]])


def as_generator(random_state):
    """Accept None, an int seed or a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
