"""
Deterministic seeding.

Seeds are stable 64-bit hashes of their provenance (master seed, cell
coordinates, replicate index, ...), and every trajectory draws from its own
counter-based Philox generator, so results never depend on scheduling.
"""

from __future__ import annotations

import hashlib
from typing import Any

import numpy as np

SEED_BITS = 64


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from an ordered tuple of parts."""
    hasher = hashlib.blake2b(digest_size=SEED_BITS // 8)
    for part in parts:
        if isinstance(part, np.integer):
            part = int(part)
        hasher.update(repr(part).encode("utf-8"))
        hasher.update(b"\x1f")
    return int.from_bytes(hasher.digest(), "big")


def make_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << SEED_BITS)))
