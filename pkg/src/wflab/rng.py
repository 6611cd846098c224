"""Deterministic random-number plumbing.

All stochastic sampling in the package goes through a counter-based Philox
generator so that a run is reproducible from its integer seed alone, on any
platform, regardless of how many draws other components consumed.

Seed splitting follows a documented rule: the seed of child stream ``k`` is
``splitmix64(master XOR k)``.  splitmix64 is a fixed 64-bit finalizer, so
nearby master seeds or indices never produce correlated child streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer step, mapping a 64-bit int to a 64-bit int."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(master: int, *indices: int) -> int:
    """Derive a child seed from ``master`` and one or more stream indices.

    Applies ``seed <- splitmix64(seed XOR index)`` once per index, so nested
    splits (study cell, then trial, then noise component) stay independent.
    """
    seed = int(master) & _MASK64
    for ix in indices:
        seed = splitmix64(seed ^ (int(ix) & _MASK64))
    return seed


def make_generator(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox 4x64) keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
