"""Deterministic RNG derivation.

Every stochastic operation takes an explicit 64-bit seed; per-item streams are
derived by spawn-key splitting so parallel and serial runs agree.
"""
from __future__ import annotations

import numpy as np


def rng_from(seed: int, *path: int) -> np.random.Generator:
    """Generator for `seed` split along an integer path (e.g. sample index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)
