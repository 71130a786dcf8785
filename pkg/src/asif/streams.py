"""Deterministic random-stream derivation.

Every Monte Carlo path derives per-task generators from a master seed and
a counter-style key, never by sharing a generator, so results do not
depend on evaluation order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_tag(label: str) -> int:
    """Stable 32-bit integer tag for a string label, for spawn keys."""
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "big")


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator derived from (seed, key); identical inputs, identical stream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))
