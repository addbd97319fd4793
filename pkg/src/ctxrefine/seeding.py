"""Deterministic random streams keyed by strings.

Every random draw in the package goes through :func:`stream`, so results do
not depend on call order or on how work is split across processes.
"""
import hashlib

import numpy as np


def _key_words(parts):
    words = []
    for part in parts:
        digest = hashlib.sha256(str(part).encode("utf-8")).digest()
        words.extend(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return words


def seed_sequence(seed, *parts):
    """SeedSequence derived from an integer seed and any number of string keys."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_key_words(parts)])


def stream(seed, *parts):
    return np.random.default_rng(seed_sequence(seed, *parts))
