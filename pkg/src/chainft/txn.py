"""Head-side transactional state: partition locks, wound-wait, order matrix.

Every packet runs as one transaction against the in-operation store. Locks
are exclusive per state partition and held until commit (strict 2PL). On a
conflict the older transaction (smaller timestamp) wounds the younger holder;
a younger requester waits. Wounded transactions restart with their original
timestamp, so the oldest live transaction always makes progress.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .core.logstore import LogStore
from .core.messages import PiggybackLog
from .core.partition import partition_of
from .core.vclock import VectorClock

__all__ = [
    "LockWait",
    "OrderMatrix",
    "InOperationStore",
    "TransactionContext",
    "TxnEngine",
    "Wounded",
    "partition_of",
]


class Wounded(Exception):
    """The transaction was aborted by an older one and must be re-executed."""


class LockWait(Exception):
    """The partition is held by an older transaction; retry later."""

    # raised on every blocked operation, so the message is built lazily
    def __init__(self, holder: "TransactionContext", partition: int = -1):
        self.holder = holder
        self.partition = partition

    def __str__(self) -> str:
        return f"partition held by txn {self.holder.txn_id}"


class OrderMatrix:
    """Square matrix ``V``: row ``i`` is the clock of state partition ``i``."""

    def __init__(self, partitions: int):
        self.partitions = partitions
        self.rows: List[List[int]] = [[0] * partitions for _ in range(partitions)]

    def join(self, involved: Iterable[int]) -> VectorClock:
        acc = [0] * self.partitions
        for i in involved:
            for k, x in enumerate(self.rows[i]):
                if x > acc[k]:
                    acc[k] = x
        return tuple(acc)

    def commit(self, involved: Set[int], written: Set[int]) -> Tuple[VectorClock, VectorClock]:
        """Apply the increment and row-join rules for one transaction.

        ``v1`` is the join of the involved rows before any increment; ``v2``
        adds one at every written partition. Read-only transactions leave the
        matrix untouched.
        """
        v1 = self.join(involved)
        if not written:
            return v1, v1
        j = list(v1)
        for w in written:
            j[w] += 1
        for i in involved:
            self.rows[i] = list(j)
        return v1, tuple(j)

    def diagonal(self) -> VectorClock:
        return tuple(self.rows[i][i] for i in range(self.partitions))

    def reset(self, clock: VectorClock) -> None:
        self.rows = [list(clock) for _ in range(self.partitions)]


class InOperationStore:
    def __init__(self, data: Optional[Dict[bytes, bytes]] = None):
        self.data: Dict[bytes, bytes] = {} if data is None else data
        self.locks: Dict[int, "TransactionContext"] = {}

    def holder(self, partition: int) -> Optional["TransactionContext"]:
        return self.locks.get(partition)


@dataclass(eq=False, slots=True)
class TransactionContext:
    txn_id: int
    timestamp: int
    packet_id: int
    held: Set[int] = field(default_factory=set)
    involved: Set[int] = field(default_factory=set)
    written: Set[int] = field(default_factory=set)
    write_set: Dict[bytes, bytes] = field(default_factory=dict)
    read_cache: Dict[bytes, Optional[bytes]] = field(default_factory=dict)
    aborted: bool = False
    finished: bool = False
    shrinking: bool = False

    @property
    def active(self) -> bool:
        return not (self.aborted or self.finished)


class TxnEngine:
    """The Head's transaction manager for one middlebox.

    ``mode="scalar"`` replaces the order matrix with a single seq-number that
    advances only on write transactions.
    """

    def __init__(self, partitions: int, log: Optional[LogStore] = None, mode: str = "vector"):
        if mode not in ("vector", "scalar"):
            raise ValueError(mode)
        if mode == "scalar" and partitions != 1:
            raise ValueError("scalar mode uses a single partition")
        self.partitions = partitions
        self.mode = mode
        self.store = InOperationStore()
        self.matrix = OrderMatrix(partitions)
        self.seq = 0
        self.log = log if log is not None else LogStore(partitions)
        self._next_ts = 0
        self._next_id = 0
        self.wounds = 0
        self.commits = 0

    # -- lifecycle -----------------------------------------------------------

    def begin(self, packet_id: int, timestamp: Optional[int] = None) -> TransactionContext:
        self._next_id += 1
        if timestamp is None:
            self._next_ts += 1
            timestamp = self._next_ts
        return TransactionContext(self._next_id, timestamp, packet_id)

    def restart(self, ctx: TransactionContext) -> TransactionContext:
        """Fresh context for re-execution, keeping the original timestamp."""
        if ctx.held:
            self._release(ctx)
        return self.begin(ctx.packet_id, timestamp=ctx.timestamp)

    def abort(self, ctx: TransactionContext) -> None:
        ctx.aborted = True
        ctx.write_set.clear()
        self._release(ctx)

    # -- data access ---------------------------------------------------------

    def read(self, ctx: TransactionContext, key: bytes) -> Optional[bytes]:
        p = self._acquire(ctx, key)
        ctx.involved.add(p)
        if key in ctx.write_set:
            return ctx.write_set[key]
        value = self.store.data.get(key)
        ctx.read_cache[key] = value
        return value

    def write(self, ctx: TransactionContext, key: bytes, value: bytes) -> None:
        p = self._acquire(ctx, key)
        ctx.involved.add(p)
        ctx.written.add(p)
        ctx.write_set[key] = value

    def _acquire(self, ctx: TransactionContext, key: bytes) -> int:
        if ctx.aborted:
            raise Wounded(ctx.txn_id)
        if ctx.finished:
            raise RuntimeError("transaction already committed")
        p = partition_of(key, self.partitions)
        if p in ctx.held:
            return p
        assert not ctx.shrinking, "2PL: lock acquired after release"
        locks = self.store.locks
        holder = locks.get(p)
        if holder is not None:
            if ctx.timestamp < holder.timestamp:
                self._wound(holder)
            else:
                raise LockWait(holder, p)
        locks[p] = ctx
        ctx.held.add(p)
        return p

    def _wound(self, victim: TransactionContext) -> None:
        self.wounds += 1
        self.abort(victim)

    def _release(self, ctx: TransactionContext) -> None:
        ctx.shrinking = True
        locks = self.store.locks
        for p in ctx.held:
            if locks.get(p) is ctx:
                del locks[p]
        ctx.held.clear()

    # -- commit --------------------------------------------------------------

    def commit(self, ctx: TransactionContext) -> PiggybackLog:
        """Order, apply and log the transaction, then release its locks."""
        if ctx.aborted:
            raise Wounded(ctx.txn_id)
        if self.mode == "scalar":
            pl = self._commit_scalar(ctx)
        else:
            pl = self._commit_vector(ctx)
        ctx.finished = True
        self._release(ctx)
        self.commits += 1
        return pl

    def _commit_vector(self, ctx: TransactionContext) -> PiggybackLog:
        v1, v2 = self.matrix.commit(ctx.involved, ctx.written)
        updates = tuple(ctx.write_set.items())
        if updates:
            data = self.store.data
            log = self.log
            P = self.partitions
            for k, v in updates:
                data[k] = v
                p = partition_of(k, P)
                log.put(k, v, v2[p], p)
        return PiggybackLog(updates, v1, v2)

    def _commit_scalar(self, ctx: TransactionContext) -> PiggybackLog:
        updates = tuple(ctx.write_set.items())
        if not updates:
            t = (self.seq,)
            return PiggybackLog((), t, t)
        self.seq += 1
        data = self.store.data
        for k, v in updates:
            data[k] = v
            self.log.put(k, v, self.seq, 0)
        return PiggybackLog(updates, (self.seq - 1,), (self.seq,))

    # -- replication view ----------------------------------------------------

    def max_clock(self) -> VectorClock:
        """Highest committed seq per partition (the Head's own MAX)."""
        if self.mode == "scalar":
            return (self.seq,)
        return self.matrix.diagonal()

    def recover(self, log: LogStore, clock: VectorClock) -> None:
        """Rebuild from a fetched log: latest value of every key, rows := clock."""
        self.log = log
        self.store = InOperationStore({k: v for k, v, _ in log.latest_items()})
        if self.mode == "scalar":
            self.seq = clock[0]
        else:
            self.matrix.reset(clock)
