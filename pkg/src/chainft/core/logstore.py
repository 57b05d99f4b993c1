"""Versioned per-middlebox log of state-variable writes."""

from __future__ import annotations

from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

from .vclock import VectorClock, vc_merge, vc_zero

Key = bytes
Value = bytes

MAX_KEY_LEN = 255
MAX_VALUE_LEN = 65535


class LogEntry(NamedTuple):
    key: Key
    value: Value
    seq: int
    partition: int


class LogStore:
    """Multimap ``(partition, seq) -> {key: value}`` plus a latest-value index.

    Pruning drops history at or below the committed watermark but always keeps
    the newest entry of every key, so recovery and retransmission can still
    serve current values.
    """

    __slots__ = ("partitions", "_entries", "_latest", "watermark")

    def __init__(self, partitions: int):
        if partitions < 1:
            raise ValueError("partition count must be >= 1")
        self.partitions = partitions
        self._entries: Dict[Tuple[int, int], Dict[Key, Value]] = {}
        self._latest: Dict[Key, Tuple[Value, int, int]] = {}
        self.watermark: VectorClock = vc_zero(partitions)

    def __len__(self) -> int:
        return sum(len(b) for b in self._entries.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LogStore):
            return NotImplemented
        return (
            self.partitions == other.partitions
            and self._entries == other._entries
            and self.watermark == other.watermark
        )

    def insert(self, entry: LogEntry) -> bool:
        return self.put(entry.key, entry.value, entry.seq, entry.partition)

    def put(self, key: Key, value: Value, seq: int, partition: int) -> bool:
        """Log ``value`` for ``key`` at ``seq``. Returns True if the store changed.

        Re-inserting an existing ``(key, seq)`` is a no-op whatever the value.
        """
        if seq < 1:
            raise ValueError("log entries need seq >= 1")
        slot = (partition, seq)
        bucket = self._entries.get(slot)
        if bucket is not None and key in bucket:
            return False
        prev = self._latest.get(key)
        if seq <= self.watermark[partition] and prev is not None and prev[1] >= seq:
            # already-pruned history; the newer snapshot wins
            return False
        if bucket is None:
            bucket = self._entries[slot] = {}
        bucket[key] = value
        if prev is None or seq > prev[1]:
            self._latest[key] = (value, seq, partition)
            if prev is not None and prev[1] <= self.watermark[prev[2]]:
                self._drop(key, prev[2], prev[1])
        return True

    def _drop(self, key: Key, partition: int, seq: int) -> None:
        slot = (partition, seq)
        bucket = self._entries.get(slot)
        if bucket is not None:
            bucket.pop(key, None)
            if not bucket:
                del self._entries[slot]

    def latest(self, key: Key) -> Optional[Tuple[Value, int]]:
        hit = self._latest.get(key)
        return None if hit is None else (hit[0], hit[1])

    def latest_seq(self, key: Key) -> int:
        hit = self._latest.get(key)
        return 0 if hit is None else hit[1]

    def get(self, key: Key, seq: int, partition: int) -> Optional[Value]:
        bucket = self._entries.get((partition, seq))
        return None if bucket is None else bucket.get(key)

    def has_slot(self, partition: int, seq: int) -> bool:
        return (partition, seq) in self._entries

    def at(self, partition: int, seq: int) -> List[LogEntry]:
        bucket = self._entries.get((partition, seq), {})
        return [LogEntry(k, v, seq, partition) for k, v in bucket.items()]

    def history(self, key: Key) -> List[Tuple[int, Value]]:
        out = [(seq, b[key]) for (_, seq), b in self._entries.items() if key in b]
        out.sort()
        return out

    def keys(self) -> Iterator[Key]:
        return iter(self._latest)

    def latest_items(self) -> Iterator[Tuple[Key, Value, int]]:
        for k, (v, seq, _) in self._latest.items():
            yield k, v, seq

    def entries(self) -> Iterator[LogEntry]:
        for (p, seq), bucket in sorted(self._entries.items()):
            for k, v in bucket.items():
                yield LogEntry(k, v, seq, p)

    def range(self, lo: VectorClock, hi: VectorClock) -> List[LogEntry]:
        """Entries with ``lo[p] < seq <= hi[p]`` in seq order per partition."""
        out = []
        for p in range(self.partitions):
            for seq in range(lo[p] + 1, hi[p] + 1):
                bucket = self._entries.get((p, seq))
                if bucket:
                    out.extend(LogEntry(k, v, seq, p) for k, v in bucket.items())
        return out

    def prune(self, upto: VectorClock) -> None:
        wm = self.watermark
        if len(upto) != len(wm):
            raise ValueError("prune vector has wrong length")
        for p in range(self.partitions):
            for seq in range(wm[p] + 1, upto[p] + 1):
                bucket = self._entries.pop((p, seq), None)
                if not bucket:
                    continue
                keep = {k: v for k, v in bucket.items() if self._latest[k][1] == seq}
                if keep:
                    self._entries[(p, seq)] = keep
        self.watermark = vc_merge(wm, upto)

    def copy(self) -> "LogStore":
        dup = LogStore(self.partitions)
        dup._entries = {slot: dict(b) for slot, b in self._entries.items()}
        dup._latest = dict(self._latest)
        dup.watermark = self.watermark
        return dup
