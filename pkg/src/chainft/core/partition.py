"""Deterministic key-to-partition mapping shared by every node."""

from __future__ import annotations

from functools import lru_cache

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


@lru_cache(maxsize=1 << 16)
def partition_of(key: bytes, partitions: int) -> int:
    if partitions < 1:
        raise ValueError("partition count must be >= 1")
    if partitions == 1:
        return 0
    return fnv1a_64(key) % partitions
