"""Deterministic RNG derivation.

All randomness in a run flows from one root seed. Sub-streams are derived by
name so that adding a new consumer never shifts the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _tag_entropy(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(root_seed: int, *tags: str | int) -> np.random.Generator:
    """Return a generator for the sub-stream named by `tags`.

    Equal (root_seed, tags) always yields the same stream, on every platform.
    """
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, int):
            entropy.append(tag & 0xFFFFFFFFFFFFFFFF)
        else:
            entropy.append(_tag_entropy(tag))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stable_hash_hex(data: bytes) -> str:
    """Short stable content hash used for cache stamps and config hashes."""
    return hashlib.blake2b(data, digest_size=16).hexdigest()
