"""Keyed random substreams.

Every random draw in a run comes from a stream keyed by ``(seed, purpose,
node, t)``, so two independent code paths that agree on the key consume the
same numbers without sharing any generator object.
"""

import numpy as np

GRADIENT = 0
COMPRESSOR = 1
DATA = 2
PROBE = 3


def stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, key)])))
