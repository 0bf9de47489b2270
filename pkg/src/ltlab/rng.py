"""Hierarchical seeded random streams.

Every consumer (data synthesis, each init, batching, ...) gets its own
generator keyed by (seed, *names). Streams depend only on that key, so
adding a consumer somewhere never perturbs the draws of another.
"""

from __future__ import annotations

import zlib

import numpy as np


def consumer_rng(seed: int, *names: str) -> np.random.Generator:
    """Independent generator for one named consumer under a run seed."""
    key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
