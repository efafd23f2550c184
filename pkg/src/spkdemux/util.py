"""Small shared helpers: labeled deterministic RNG streams."""

import zlib

import numpy as np


def seeded_rng(seed, *labels):
    """Return a PCG64 generator derived from ``seed`` and string labels.

    The same (seed, labels) always yields the same stream, and distinct
    labels yield independent streams, so modules can draw randomness
    without coordinating a shared generator.
    """
    keys = [int(seed)] + [zlib.crc32(str(lab).encode("utf-8")) for lab in labels]
    return np.random.default_rng(np.random.SeedSequence(keys))
