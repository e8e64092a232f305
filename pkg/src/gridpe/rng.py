"""Deterministic RNG streams.

Every random draw in the package comes from a Philox counter-based generator
keyed by a stable hash of (seed, *tags). Streams are therefore independent of
import order, thread scheduling, and each other; reruns with the same seed are
bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, *tags: object) -> int:
    """128-bit Philox key derived from a seed and a tag path."""
    text = ":".join([str(int(seed))] + [repr(t) for t in tags])
    digest = hashlib.blake2s(text.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *tags: object) -> np.random.Generator:
    """Fresh generator for the (seed, *tags) stream."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))


class CounterStream:
    """Per-op RNG stream: the n-th draw is a function of (seed, tags, n).

    Used for dropout masks so that run order alone — not thread scheduling —
    determines randomness.
    """

    def __init__(self, seed: int, *tags: object):
        self._seed = seed
        self._tags = tags
        self._counter = 0

    def next(self) -> np.random.Generator:
        gen = stream(self._seed, *self._tags, self._counter)
        self._counter += 1
        return gen

    @property
    def counter(self) -> int:
        return self._counter
