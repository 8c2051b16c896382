"""
Seeding
Deterministic 64-bit seed mixing and named random streams
"""

from typing import Iterable

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(value: int) -> int:
    """One SplitMix64 finalisation round over a 64-bit integer"""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed; order matters"""
    acc = 0
    for part in parts:
        acc = splitmix64(acc ^ (int(part) & _MASK64))
    return acc


def generator(seed: int) -> np.random.Generator:
    """PCG64 generator; the one PRNG used for sampling and synthetic data"""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def counter_stream(key: Iterable[int]) -> np.random.Generator:
    """Counter-based Philox stream keyed by a tuple of integers (dropout masks)"""
    return np.random.Generator(np.random.Philox(key=mix_seed(*key)))
