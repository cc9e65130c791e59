"""One base seed fans out into independent stage seeds.

``derive_seed(base, *tags)`` hashes the base seed and the tags with SHA-256
and keeps the first 8 bytes (little endian, top bit cleared), so every stage
and every item gets a stable seed that does not depend on execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base: int, *tags) -> int:
    text = "/".join([str(int(base))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def rng_for(base: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *tags))
