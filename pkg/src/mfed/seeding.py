"""Deterministic RNG stream derivation.

Every random draw in a run comes from a named child stream of the experiment
seed, so results never depend on call order, client scheduling, or thread
count. Stream names use stable hashing (never Python's randomized hash()).
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *parts) -> int:
    """Map (base seed, stream name parts) to a stable 64-bit child seed."""
    tag = ":".join(str(p) for p in (base_seed, *parts))
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little", signed=False)


def stream(base_seed: int, *parts) -> np.random.Generator:
    """Independent generator for the named child stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, *parts)))
