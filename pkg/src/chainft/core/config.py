"""Chain layout and timing parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

if TYPE_CHECKING:
    from ..mbox import MiddleboxSpec


@dataclass(frozen=True)
class ChainConfig:
    middleboxes: Tuple["MiddleboxSpec", ...]
    f: int = 1
    mode: str = "vector"  # or "scalar": single seq-number per Head
    latency_min: int = 50
    latency_max: int = 150
    timer_period: Optional[int] = None  # default 10x mean latency
    queue_capacity: int = 1024
    nack_timeout: Optional[int] = None  # default 5x mean latency
    detect_delay: int = 20
    init_delay: int = 10
    op_ticks: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.middleboxes:
            raise ValueError("chain needs at least one middlebox")
        if self.f < 0:
            raise ValueError("f must be >= 0")
        if self.mode not in ("vector", "scalar"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.latency_min <= self.latency_max:
            raise ValueError("need 0 < latency_min <= latency_max")
        if self.queue_capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        if self.mode == "scalar" and any(m.partitions != 1 for m in self.middleboxes):
            raise ValueError("scalar mode requires one partition per middlebox")

    @property
    def n(self) -> int:
        return len(self.middleboxes)

    @property
    def n_eff(self) -> int:
        return max(self.n, self.f + 1)

    @property
    def mean_latency(self) -> float:
        return (self.latency_min + self.latency_max) / 2

    @property
    def period(self) -> int:
        if self.timer_period is not None:
            return self.timer_period
        return int(10 * self.mean_latency)

    @property
    def nack_after(self) -> int:
        if self.nack_timeout is not None:
            return self.nack_timeout
        return int(5 * self.mean_latency)

    def partitions(self, mid: int) -> int:
        return self.middleboxes[mid - 1].partitions

    def group(self, mid: int) -> List[int]:
        """Positions replicating middlebox ``mid``, Head first, around the ring."""
        return [(mid - 1 + k) % self.n_eff + 1 for k in range(self.f + 1)]

    def groups(self) -> Dict[int, List[int]]:
        return {mid: self.group(mid) for mid in range(1, self.n + 1)}

    def memberships(self, position: int) -> Dict[int, int]:
        """``middlebox id -> index in its group`` for every group ``position`` is in."""
        out = {}
        for mid, members in self.groups().items():
            if position in members:
                out[mid] = members.index(position)
        return out
