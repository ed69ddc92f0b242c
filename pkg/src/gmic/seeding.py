"""Deterministic RNG streams derived from one master seed.

Every random component draws from ``rng_for(seed, *labels)`` with a
stable string label, so parallel or reordered execution never changes
the stream any component sees.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Independent generator keyed by (seed, labels)."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, (int, np.integer)):
            entropy.append(int(label) & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(label).encode("utf-8")))
    return np.random.default_rng(entropy)
