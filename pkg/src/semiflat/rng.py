"""Counter-based random streams keyed by a seed and a tuple of stream ids."""

import numpy as np


def stream(seed, *ids):
    """Philox generator for ``(seed, ids...)``; equal keys give equal streams."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(ss))
