"""Fixed-length vector clocks over the state partitions of one middlebox.

Clocks are plain tuples of non-negative ints so they can be shared between
packets, log stores and trace records without copying.
"""

from __future__ import annotations

from typing import Iterable, Tuple

VectorClock = Tuple[int, ...]


class ConfigurationError(ValueError):
    """Raised when two clocks of different partition counts are combined."""


def vc_zero(p: int) -> VectorClock:
    return (0,) * p


def _check(a: VectorClock, b: VectorClock) -> None:
    if len(a) != len(b):
        raise ConfigurationError(f"vector clock length mismatch: {len(a)} != {len(b)}")


def vc_merge(a: VectorClock, b: VectorClock) -> VectorClock:
    """Elementwise maximum."""
    if len(a) != len(b):
        _check(a, b)
    if a == b:
        return a
    return tuple(x if x >= y else y for x, y in zip(a, b))


def vc_leq(a: VectorClock, b: VectorClock) -> bool:
    """Partial order: true iff ``a[i] <= b[i]`` for every partition."""
    if len(a) != len(b):
        _check(a, b)
    for x, y in zip(a, b):
        if x > y:
            return False
    return True


def vc_join(clocks: Iterable[VectorClock]) -> VectorClock:
    it = iter(clocks)
    acc = next(it)
    for c in it:
        acc = vc_merge(acc, c)
    return acc


def vc_concurrent(a: VectorClock, b: VectorClock) -> bool:
    return not vc_leq(a, b) and not vc_leq(b, a)
