"""Seed derivation shared by every generator.

All randomness flows from a single 64-bit seed.  Sub-streams (shards, splits,
per-rule draws) get their own seed through a splitmix64 finalizer so they are
decorrelated but still a pure function of ``(seed, index)``.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Seed of sub-stream ``index``: ``splitmix64(seed XOR index)``."""
    return splitmix64((seed & MASK64) ^ (index & MASK64))


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the sub-stream reached by folding ``path`` into ``seed``."""
    s = seed & MASK64
    for p in path:
        s = derive_seed(s, p)
    return np.random.Generator(np.random.PCG64(s))
