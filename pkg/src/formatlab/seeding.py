"""Seed derivation.

Every random stream is a NumPy ``Generator(PCG64)`` built from
``SeedSequence(root_seed, spawn_key=key)``. Keys are tuples of small
integers naming the stream, so a stream's draws depend only on the root
seed and its key, never on the order in which streams are created.
"""

from __future__ import annotations

import numpy as np

# first component of every spawn key
TASKS = 1
ROLLOUTS = 2
EVAL = 3
INIT = 4


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))
