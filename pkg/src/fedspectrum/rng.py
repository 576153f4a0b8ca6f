"""Deterministic RNG stream derivation.

Every stochastic operation takes a seed that is either a single integer
or a tuple of integers (a stream key). Child streams are derived by
extending the key with integer tags, so per-node / per-example results
never depend on evaluation order. Two keys that differ in any position
yield statistically independent PCG64 streams.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]

# Stream tags keep child streams of one master seed disjoint by purpose.
STREAM_INIT = 1
STREAM_DATA = 2
STREAM_TRAIN = 3
STREAM_ATTACK = 4
STREAM_TESTER = 5
STREAM_VALIDATION = 6
STREAM_DOPPLER = 7
STREAM_DP = 8
STREAM_IMPORT = 9
STREAM_EVAL = 10


def as_key(seed: Seed) -> tuple[int, ...]:
    """Normalize a seed to a tuple of non-negative ints."""
    if isinstance(seed, (int, np.integer)):
        key = (int(seed),)
    else:
        key = tuple(int(s) for s in seed)
    if any(s < 0 for s in key):
        raise ValueError(f"seed key must be non-negative, got {key}")
    return key


def subkey(seed: Seed, *tags: int) -> tuple[int, ...]:
    """Child stream key for (seed, *tags)."""
    return as_key(seed) + tuple(int(t) for t in tags)


def child_rng(seed: Seed, *tags: int) -> np.random.Generator:
    """Generator seeded on the (seed, *tags) stream."""
    return np.random.default_rng(list(subkey(seed, *tags)))
