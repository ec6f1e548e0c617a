"""Portable seeded randomness.

Splits are drawn from SplitMix64 (Steele, Lea & Flood 2014) so the same seed
yields the same node order in any language.  Numeric work (weight init,
k-means++) uses numpy's PCG64 seeded from a derived 64-bit value.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection (no modulo bias)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = MASK64 - (MASK64 + 1) % bound
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % bound

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


def derive_seed(master: int, tag: str) -> int:
    """Component seed = master XOR a fixed 64-bit tag derived from ``tag``."""
    h = zlib.crc32(tag.encode()) | (zlib.crc32(tag[::-1].encode()) << 32)
    return (master ^ h) & MASK64


def numpy_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))
