"""Deterministic randomness helpers.

All randomness in the package flows through counter-based Philox streams
keyed explicitly by a user seed plus a small integer path, so any quantity
can be regenerated independently of query order and no global RNG state is
ever touched.
"""

from __future__ import annotations

import numpy as np

# Fixed stream tags keep unrelated substreams disjoint for a given seed.
STREAM_GRAPH = 1
STREAM_PROBLEM = 2
STREAM_COST = 3
STREAM_BOUNDS = 4


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return a Generator for the Philox stream at ``(seed, *path)``.

    The same ``(seed, path)`` always yields an identical stream; distinct
    paths yield statistically independent streams. ``path`` may hold up to
    four non-negative integers (the Philox counter words).
    """
    if len(path) > 4:
        raise ValueError("substream path supports at most 4 indices")
    counter = np.zeros(4, dtype=np.uint64)
    for k, p in enumerate(path):
        if p < 0:
            raise ValueError("substream path indices must be non-negative")
        counter[4 - len(path) + k] = np.uint64(p)
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=counter))
