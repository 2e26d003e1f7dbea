"""Seed derivation: one independent, named stream per consumer."""
import zlib

import numpy as np


def root_sequence(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed))


def named_stream(parent, name: str) -> np.random.SeedSequence:
    """Child sequence keyed by ``name``, so new consumers never shift existing streams."""
    if not isinstance(parent, np.random.SeedSequence):
        parent = root_sequence(parent)
    return np.random.SeedSequence(parent.entropy, spawn_key=tuple(parent.spawn_key) + (zlib.crc32(name.encode()),))
