"""Deterministic RNG substreams.

Every consumer of randomness owns a substream addressed by (seed, path of
integers), so adding samples, changing batch sizes, or reordering work never
perturbs another consumer's draws. Pre-drawn blocks are laid out
sample-major for the same reason.
"""

from __future__ import annotations

import numpy as np

# stream ids (first path element)
INIT = 0
DATA = 1
TRAIN = 2
SAMPLE_PRIOR = 3
SAMPLE_MASKS = 4
EVAL = 5


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream at (seed, *path)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)
