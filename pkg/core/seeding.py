import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stable_hash(key) -> int:
    """64-bit hash of ``str(key)`` that does not change between processes."""
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_seed(seed: int, *keys) -> int:
    """``seed`` XOR the stable hash of each key, folded into 64 bits."""
    derived = seed & _MASK64
    for key in keys:
        derived ^= stable_hash(key)
    return derived


def make_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
