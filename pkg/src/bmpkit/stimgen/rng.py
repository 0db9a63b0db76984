"""Seeded random streams.

Every stream is a Philox counter-based generator keyed by a SeedSequence over
a tuple of integers, so a video's stream depends only on (master seed, video
index, purpose) and not on generation order or worker count.
"""
from __future__ import annotations

import zlib

import numpy as np


def _entropy(seed) -> list[int]:
    if isinstance(seed, (tuple, list)):
        return [int(s) & 0xFFFFFFFF for s in seed]
    return [int(seed) & 0xFFFFFFFF]


def philox(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_entropy(seed))))


def derive_seed(*parts) -> int:
    """A 32-bit seed from ints and strings (strings hashed with crc32)."""
    ints = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(_entropy(ints)).generate_state(1)[0])
