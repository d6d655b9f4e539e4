"""Stateless, purpose-tagged random streams.

Every random draw in the package goes through `rng_for(seed, *tags)`.  A
stream is fully determined by the run seed plus its tags, never by how many
draws other code made before it.  That is what makes a run resumed from a
checkpoint consume exactly the same randomness as an uninterrupted one.
"""

from __future__ import annotations

from zlib import crc32

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return crc32(str(tag).encode("utf-8"))


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Return a Generator keyed by (seed, tags).

    Same (seed, tags) always yields the same stream; any change to either
    yields an unrelated one.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
