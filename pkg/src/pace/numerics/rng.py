"""Deterministic random streams.

Every random draw in the package comes from a stream derived from a master
seed and a short purpose tag ("lora/s2", "mask/17", ...). Streams for
different tags are statistically independent, and a stream is a pure
function of (seed, tag): re-deriving it mid-run, or in a resumed run,
yields the same draws. That property is what makes checkpoint resume
bit-exact without ever serializing generator state.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_hash(tag: str) -> int:
    """Stable 64-bit hash of a purpose tag (not Python's salted hash)."""
    digest = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, tag: str) -> np.random.Generator:
    """Independent generator for (seed, tag).

    The pair is packed into a 128-bit Philox key, so distinct tags give
    uncorrelated counter-based streams under the same master seed.
    """
    key = np.array([seed & _MASK64, tag_hash(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
