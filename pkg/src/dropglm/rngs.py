"""Deterministic RNG substreams.

Every stochastic routine takes an explicit ``numpy.random.Generator``.
Nested work (replicates, CV samples, folds) derives child streams keyed
by integers or short strings, so results do not depend on execution
order and identical seeds reproduce identical outputs bitwise.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"substream keys must be nonnegative, got {key}")
        return int(key)
    if isinstance(key, str):
        # crc32 is stable across runs and platforms, unlike hash().
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"substream keys must be int or str, got {type(key).__name__}")


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the child stream identified by ``keys`` under ``seed``."""
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))
