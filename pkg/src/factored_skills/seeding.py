"""Deterministic per-run seeds from a master seed (splitmix64 finalizer)."""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def derive_seed(master_seed: int, run_index: int) -> int:
    """Mix ``master_seed + run_index * GOLDEN_GAMMA`` into an unsigned 64-bit seed.

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB;
    z ^= z >> 31, all modulo 2**64.
    """
    z = (int(master_seed) + int(run_index) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def make_rng(master_seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, run_index))
