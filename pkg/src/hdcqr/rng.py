"""Counter-based random streams keyed by ``(seed, purpose, counters...)``.

Every random draw in the package comes from :func:`stream`, so results do
not depend on the order in which parallel jobs run.
"""

import numpy as np

_PURPOSES = {
    "data": 1,
    "folds": 2,
    "split": 3,
    "replication": 4,
    "nulls": 5,
    "test": 99,
}


def stream(seed, purpose, *counters):
    """Independent Philox generator for one ``(purpose, counters)`` cell."""
    key = (_PURPOSES[purpose],) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
