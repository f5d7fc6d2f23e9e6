"""Portable xoshiro256** generator with keyed stream splitting.

A stream is identified by ``(seed, *labels)``. The key is folded through the
SplitMix64 finalizer one label at a time, and the resulting key seeds the
four state words via SplitMix64, as recommended by the xoshiro authors.
Floats use the top 53 bits; normals use Box-Muller pairs. Every operation is
64-bit integer arithmetic plus IEEE double math, so streams reproduce
bit-for-bit on any platform.
"""
from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64_mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, *labels: int) -> int:
    key = splitmix64_mix((seed + GOLDEN) & MASK64)
    for label in labels:
        key = splitmix64_mix(((key ^ (label & MASK64)) + GOLDEN) & MASK64)
    return key


class Xoshiro256:
    def __init__(self, seed: int, *labels: int):
        x = derive_key(seed, *labels)
        state = []
        for _ in range(4):
            x = (x + GOLDEN) & MASK64
            state.append(splitmix64_mix(x))
        self.s = state
        self._spare = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return low + (high - low) * self.random()

    def normal(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return mean + sigma * z
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return mean + sigma * r * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int, sigma: float = 1.0) -> list[float]:
        return [self.normal(0.0, sigma) for _ in range(n)]

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.random() * n)
