"""Deterministic random streams derived from a single root seed.

Every source of randomness in the package (parameter init, dropout,
splits, samplers) pulls from a named stream. Streams are Philox
counter-based generators keyed by (root_seed, sha256(name)), so a given
(seed, name) pair yields the same sequence on every platform and is
independent of how often other streams are consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Return the generator for the stream `name` under `root_seed`."""
    if root_seed < 0:
        raise ValueError("root seed must be non-negative")
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    salt = int.from_bytes(digest[:8], "little")
    key = np.array([root_seed & 0xFFFFFFFFFFFFFFFF, salt], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
