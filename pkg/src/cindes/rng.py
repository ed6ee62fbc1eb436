"""Deterministic named random streams.

A master seed fans out to independent streams keyed by string/int labels.
The key is a SHA-256 hash of the label path, so adding a new component
never perturbs the streams of existing ones, and the mapping is stable
across platforms and numpy versions (PCG64 state depends only on the
SeedSequence entropy words).
"""

import hashlib

import numpy as np


def seed_sequence(master_seed, *labels):
    """SeedSequence for the stream named by ``labels`` under ``master_seed``."""
    h = hashlib.sha256(str(int(master_seed)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    digest = h.digest()
    words = [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 20, 4)]
    return np.random.SeedSequence(words)


def stream(master_seed, *labels):
    """Independent Generator for the stream named by ``labels``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *labels)))
