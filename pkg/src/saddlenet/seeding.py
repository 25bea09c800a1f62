"""Named random substreams so that each consumer owns its randomness."""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for consumer ``name`` derived from the run seed.

    Changing how much randomness one consumer draws never shifts another's.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
