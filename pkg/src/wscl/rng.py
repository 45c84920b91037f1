"""Deterministic named random streams.

Every random draw in the package flows from a (seed, label, *indices) key,
never from ambient process entropy. Identical keys yield identical draw
sequences on any platform, which is what makes whole runs replayable
byte-for-byte.
"""

import zlib

import numpy as np


def stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return a fresh generator keyed by (seed, label, indices)."""
    key = (int(seed), zlib.crc32(label.encode("utf-8")), *(int(i) for i in indices))
    return np.random.default_rng(np.random.SeedSequence(key))
