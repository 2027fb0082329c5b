"""Deterministic per-sample random streams.

Every stochastic decision in the pipeline (augment-or-not gate, negative
selection, quadrant and cross-point draws) is made on a stream derived from
``(master_seed, sample_id)`` alone, so results are independent of worker
count and scheduling order.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit avalanche mix."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


def stable_hash(value) -> int:
    """Map an opaque identifier to a stable u64, identical across runs.

    Integers map to their value mod 2**64; strings and bytes hash through
    blake2b so the result never depends on PYTHONHASHSEED.
    """
    if isinstance(value, int):
        return value & _MASK64
    if isinstance(value, str):
        value = value.encode("utf-8")
    if isinstance(value, bytes):
        return int.from_bytes(hashlib.blake2b(value, digest_size=8).digest(), "little")
    raise TypeError(f"unhashable identifier type: {type(value).__name__}")


class SplitMix64:
    """Minimal SplitMix64 stream generator.

    Kept dependency-free so identical byte streams are guaranteed on any
    platform and numpy version.
    """

    __slots__ = ("seed", "_state")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._state = self.seed

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bias is < n / 2**64."""
        if n <= 0:
            raise ValueError("randbelow() requires n >= 1")
        return self.next_u64() % n

    def partial_shuffle(self, items: list, count: int) -> list:
        """First ``count`` elements of a Fisher-Yates shuffle of ``items``."""
        if count > len(items):
            raise ValueError(f"cannot draw {count} from {len(items)} items")
        picked = list(items)
        for i in range(count):
            j = i + self.randbelow(len(picked) - i)
            picked[i], picked[j] = picked[j], picked[i]
        return picked[:count]


def derive_sample_rng(master_seed: int, sample_id) -> SplitMix64:
    """Per-sample generator seeded by mixing master_seed with the sample id."""
    return SplitMix64(mix64((master_seed & _MASK64) ^ stable_hash(sample_id)))
