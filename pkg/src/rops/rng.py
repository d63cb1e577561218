"""Counter-based stream derivation.

Every replicate gets its own generator keyed by ``(root seed, index)`` through
``SeedSequence.spawn_key``, so the draws seen by replicate ``i`` never depend
on how many workers run or in which order they finish.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))))


def derived_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))
