"""Deterministic seed derivation.

All randomness in the package funnels through one base seed. Component
streams are derived by hashing the component name plus any integer
qualifiers (run index, timestep, episode), so every consumer gets an
independent, reproducible substream.
"""

import hashlib

import numpy as np


def derive_seed(base_seed: int, *labels) -> int:
    """Derive a 64-bit child seed from a base seed and a label path.

    Labels may be strings or ints; the same path always yields the same
    child seed, independent of platform.
    """
    digest = hashlib.sha256()
    digest.update(str(int(base_seed)).encode())
    for label in labels:
        digest.update(b"/")
        digest.update(str(label).encode())
    return int.from_bytes(digest.digest()[:8], "little")


def rng_for(base_seed: int, *labels) -> np.random.Generator:
    """Generator seeded from ``derive_seed(base_seed, *labels)``."""
    return np.random.default_rng(derive_seed(base_seed, *labels))
