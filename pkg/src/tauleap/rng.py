"""Seed derivation for reproducible parallel ensembles.

Chunk ``i`` of a run with root seed ``s`` draws from
``Generator(PCG64(SeedSequence(s, spawn_key=(i,))))``.  Chunk boundaries
depend only on the sample count and chunk size, never on the worker count,
so an ensemble is the same however it is scheduled.
"""

from __future__ import annotations

import numpy as np


def chunk_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def chunk_sizes(n: int, chunk: int) -> list[int]:
    if n < 0:
        raise ValueError("sample count must be non-negative")
    if chunk <= 0:
        raise ValueError("chunk size must be positive")
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])
