"""Deterministic RNG substreams.

Every random decision in a run draws from a numpy ``Generator`` whose seed is
derived from ``(run seed, *keys)`` by folding the keys through SplitMix64.
Rounds and steps can therefore be replayed in isolation and in any order.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Stream tags. Kept small and fixed: they are part of the replay contract.
TAG_EXPOSE = 1
TAG_BITE = 2
TAG_PHASE2 = 3
TAG_SOLVER = 4
TAG_PARTITION = 5
TAG_SPLIT = 6
TAG_COLOR = 7
TAG_CLASS = 8
TAG_RETRY = 9
TAG_ROUNDING = 10


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (state already advanced)."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(seed: int, *keys: int) -> int:
    """Fold ``keys`` into ``seed``; order-sensitive, 64-bit output."""
    h = splitmix64(seed & MASK64)
    for key in keys:
        h = splitmix64(h ^ (key & MASK64))
    return h


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(seed, *keys)))
