"""
Seed derivation helpers.

Per-cell and per-trial seeds are derived from the master seed by hashing
the job coordinates, so a job's seed never depends on execution order.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

SeedPart = Union[int, str, float]


def derive_seed(master_seed: int, *parts: SeedPart) -> int:
    key = ":".join([str(int(master_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(seed: int | None) -> np.random.Generator:
    return np.random.default_rng(seed)
