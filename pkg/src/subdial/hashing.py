"""Stable 64-bit string hashing shared by feature extractors and dedup.

Python's builtin ``hash`` is salted per process, so every hashed-feature
index and every dialogue fingerprint in this package goes through
``stable_hash64`` instead. blake2b is used because it is fast, keyed-free
and identical across platforms and runs.
"""
from __future__ import annotations

import hashlib
from functools import lru_cache


def stable_hash64(text: str) -> int:
    """64-bit hash of a unicode string, identical across processes."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@lru_cache(maxsize=1_000_000)
def feature_bucket(feature: str, bits: int) -> int:
    """Map a raw feature string to an index in [0, 2**bits)."""
    return stable_hash64(feature) & ((1 << bits) - 1)
