"""Deterministic, counter-based random streams.

Every random draw in the package is keyed by a tuple of strings/ints
(task name, purpose, seed, ...) hashed into a Philox key, so results are
reproducible across platforms and independent of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def keyed_generator(*key_parts) -> np.random.Generator:
    """Return a Philox generator keyed by the given parts.

    The key is the first 128 bits of SHA-256 over the "|"-joined string
    representation of the parts, so any hashable, printable values work.
    """
    tag = "|".join(str(p) for p in key_parts).encode()
    key = int.from_bytes(hashlib.sha256(tag).digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


def initial_field(task_name: str, method: str, seed: int,
                  channels: int, slices: int, scale: float) -> np.ndarray:
    """Seeded i.i.d. uniform initial control field on [-scale, +scale]."""
    gen = keyed_generator(task_name, method, seed)
    return gen.uniform(-scale, scale, size=(channels, slices))
