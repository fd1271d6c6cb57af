"""Labeled seed derivation: one run seed fans out into independent streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    """Deterministic 63-bit seed from a parent seed and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))


def as_seed(rng_or_seed) -> int:
    """Accept an int seed or a Generator (from which one seed is drawn)."""
    if isinstance(rng_or_seed, np.random.Generator):
        return int(rng_or_seed.integers(2**63 - 1))
    return int(rng_or_seed)
