"""Deterministic seed derivation.

Every pipeline stage draws randomness from its own child seed, computed as
the first eight bytes (little-endian) of SHA-256 over
``"<parent>/<label>[/<label>...]"``.  Because the child only depends on the
parent seed and the stage labels, adding or reordering stages never perturbs
another stage's random stream, and the same (seed, labels) pair yields the
same stream on every machine.
"""

import hashlib

import numpy as np


def child_seed(parent: int, *labels) -> int:
    """Derive a 64-bit child seed from a parent seed and stage labels."""
    material = str(int(parent)) + "".join("/" + str(lab) for lab in labels)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(parent: int, *labels) -> np.random.Generator:
    """A fresh PCG64 generator seeded with ``child_seed(parent, *labels)``."""
    return np.random.default_rng(child_seed(parent, *labels))
