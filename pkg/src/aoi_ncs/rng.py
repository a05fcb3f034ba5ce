"""Seeded random streams.

Every logical source of randomness gets its own PCG64 stream derived from
``(seed, replication, purpose)``, so changing the sampling policy never
perturbs the plant noise and replications are independent of worker layout.
"""
from __future__ import annotations

import numpy as np

CHANNEL = 0
NOISE = 1
INITIAL_STATE = 2


def stream(seed: int, purpose: int, replication: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replication), int(purpose)))
    return np.random.Generator(np.random.PCG64(ss))
