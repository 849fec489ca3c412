"""Explicitly seeded counter-based random streams.

Nothing in the package touches numpy's global random state; every random
draw comes from a ``Generator`` built here.
"""

import zlib

import numpy as np


def _word(s):
    if isinstance(s, str):
        return zlib.crc32(s.encode())
    return int(s) & 0xFFFFFFFF


def make_rng(seed, *stream):
    """Philox generator keyed by ``seed`` and an optional stream path of ints or labels."""
    words = [int(seed) & 0xFFFFFFFF] + [_word(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
