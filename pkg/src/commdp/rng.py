"""Seeded random streams keyed by node id."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def stable_key(label: str | int) -> int:
    """Map a node id or purpose label to a 32-bit integer, stable across runs."""
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class RngSeed:
    """A master seed plus a stream id; together they fix the random sequence."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream < 0:
            raise ValueError("stream id must be non-negative")

    def generator(self, *labels: str | int) -> np.random.Generator:
        """Generator for this stream, optionally refined by extra labels (node ids, purposes)."""
        key = (self.stream,) + tuple(stable_key(lab) for lab in labels)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def child(self, *labels: str | int) -> "RngSeed":
        """A new seed whose stream is derived from this one and ``labels``."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,) + tuple(stable_key(x) for x in labels))
        return RngSeed(int(ss.generate_state(1, dtype=np.uint64)[0]), 0)


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an RngSeed, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    return np.random.default_rng(rng)
