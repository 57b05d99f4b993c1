"""Replica runtime.

A Replica at chain position ``i`` is the Head of middlebox ``m_i`` (when
``i <= n``) and a plain member of the ``f`` preceding middleboxes' groups on
the logical ring. For every group it keeps a log store and ``MAX_m``; as Head
it also owns the middlebox's transaction engine.

Packet handling: strip and apply every relevant PCL (parking the packet when a
piggyback log is not yet applicable), run the middlebox transaction, then
rewrite the piggyback (fresh PL as Head, ``C := MAX_m`` and empty PL as Tail)
and forward.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Deque, Dict, List, Optional, Set, Tuple

from . import mbox
from .core.config import ChainConfig
from .core.logstore import LogEntry, LogStore
from .core.messages import PCL, Packet, PacketKind, PiggybackLog, empty_pl
from .core.partition import partition_of
from .core.vclock import VectorClock, vc_join, vc_leq, vc_merge, vc_zero
from .txn import LockWait, TxnEngine, Wounded

if TYPE_CHECKING:
    from .simnet import Simulator


# -- control messages ---------------------------------------------------------

@dataclass(frozen=True)
class Nack:
    middlebox: int
    epoch: int
    lo: VectorClock
    hi: VectorClock
    requester: int


@dataclass(frozen=True)
class Retransmit:
    middlebox: int
    epoch: int
    lo: VectorClock
    hi: VectorClock
    entries: Tuple[LogEntry, ...]
    pruned: VectorClock


@dataclass(frozen=True)
class Fetch:
    middlebox: int
    epoch: int
    head_recovery: bool
    requester: int


@dataclass(frozen=True)
class FetchReply:
    middlebox: int
    epoch: int
    donor: int
    store: Optional[LogStore]  # None: rejected
    max: Optional[VectorClock]
    gen: int


@dataclass(frozen=True)
class AckRecovered:
    position: int
    node: int
    epoch: int


# -- per-group replica state ---------------------------------------------------

class GroupReplica:
    __slots__ = ("mid", "index", "partitions", "store", "max", "gen", "ready", "is_head", "is_tail")

    def __init__(self, mid: int, index: int, size: int, partitions: int, gen: int, ready: bool):
        self.mid = mid
        self.index = index
        self.partitions = partitions
        self.store = LogStore(partitions)
        self.max: VectorClock = vc_zero(partitions)
        self.gen = gen
        self.ready = ready
        self.is_head = index == 0
        self.is_tail = index == size - 1


class _Parked:
    __slots__ = ("packet", "pending", "since")

    def __init__(self, packet: Packet, pending: Set[int], since: int):
        self.packet = packet
        self.pending = pending
        self.since = since


class _Txn:
    __slots__ = ("packet", "ctx", "prog", "op", "wait")


_COMMIT = "c"


class HeadRunner:
    """Interleaves concurrent packet transactions at operation granularity.

    Up to ``threads`` transactions are active; each simulated step executes
    one read, write or commit of every active transaction in a seeded random
    order. Steps are purely local, so they run ahead of the global clock up
    to the next event that could touch this node.
    """

    def __init__(self, node: "Replica", spec: mbox.MiddleboxSpec, engine: TxnEngine, rng: random.Random):
        self.node = node
        self.spec = spec
        self.engine = engine
        self.rng = rng
        self.threads = spec.threads
        self.active: List[_Txn] = []
        self.waiting: Deque[Packet] = deque()
        self.step_time = 0
        self.step_scheduled: Optional[int] = None
        self.restarts = 0

    def submit(self, packet: Packet) -> None:
        if len(self.active) < self.threads:
            self._start(packet)
        else:
            self.waiting.append(packet)
        self.advance()

    def _start(self, packet: Packet) -> None:
        tx = _Txn()
        tx.packet = packet
        tx.ctx = self.engine.begin(packet.packet_id)
        tx.wait = None
        self._load(tx)
        self.active.append(tx)

    def _load(self, tx: _Txn) -> None:
        p = tx.packet
        tx.prog = mbox.program(self.spec, p.flow_id, p.packet_id, p.payload)
        tx.op = self._next(tx, None, first=True)

    @staticmethod
    def _next(tx: _Txn, value, first: bool = False):
        try:
            return next(tx.prog) if first else tx.prog.send(value)
        except StopIteration as stop:
            return (_COMMIT, stop.value)

    def advance(self) -> None:
        sim = self.node.sim
        now = sim.now
        if self.step_time < now:
            self.step_time = now
        bound = sim.quiet_until(self.node.node_id)
        ticks = self.node.cfg.op_ticks
        while self.active and self.step_time < bound:
            self._step(self.step_time)
            self.step_time += ticks
        if self.active and self.step_scheduled != self.step_time:
            self.step_scheduled = self.step_time
            sim.schedule_step(self.step_time, self.node.node_id)

    def on_step(self) -> None:
        self.step_scheduled = None
        self.advance()

    def _step(self, t: int) -> None:
        engine = self.engine
        order = self.active
        n = len(order)
        if n > 1:
            order = order[:]
            rnd = self.rng.random
            for i in range(n - 1, 0, -1):
                j = int(rnd() * (i + 1))
                order[i], order[j] = order[j], order[i]
        done = []
        locks = engine.store.locks
        for tx in order:
            ctx = tx.ctx
            w = tx.wait
            if w is not None:
                if not ctx.aborted and locks.get(w.partition) is w.holder:
                    continue  # still blocked by the same older holder
                tx.wait = None
            if ctx.aborted:
                tx.ctx = engine.restart(ctx)
                self.restarts += 1
                self._load(tx)
                continue
            op = tx.op
            try:
                kind = op[0]
                if kind == mbox.READ:
                    tx.op = self._next(tx, engine.read(ctx, op[1]))
                elif kind == mbox.WRITE:
                    engine.write(ctx, op[1], op[2])
                    tx.op = self._next(tx, None)
                else:
                    pl = engine.commit(ctx)
                    done.append((tx, pl, op[1]))
            except LockWait as e:
                tx.wait = e
            except Wounded:
                pass
        if done:
            for tx, _, _ in done:
                self.active.remove(tx)
            while self.waiting and len(self.active) < self.threads:
                self._start(self.waiting.popleft())
            for tx, pl, action in done:
                self.node.head_committed(tx.packet, tx.ctx, pl, action, t)

    def packets(self) -> List[Packet]:
        return [tx.packet for tx in self.active] + list(self.waiting)


# -- replica -------------------------------------------------------------------

class Replica:
    def __init__(self, sim: "Simulator", node_id: int, position: int, cfg: ChainConfig,
                 epoch: int, ready: bool = True):
        self.sim = sim
        self.node_id = node_id
        self.position = position
        self.cfg = cfg
        self.alive = True
        self.recovering = not ready
        self.groups: Dict[int, GroupReplica] = {}
        size = cfg.f + 1
        for mid, idx in cfg.memberships(position).items():
            self.groups[mid] = GroupReplica(mid, idx, size, cfg.partitions(mid), epoch, ready)
        self.tail_groups = [g for g in self.groups.values() if g.is_tail]
        self.member_groups = [g for g in self.groups.values() if not g.is_head]
        self.head_mid: Optional[int] = position if position <= cfg.n else None
        self.head: Optional[HeadRunner] = None
        self.fence: Dict[Tuple[int, int], int] = {}  # (mid, requester position) -> epoch
        if self.head_mid is not None:
            spec = cfg.middleboxes[self.head_mid - 1]
            g = self.groups[self.head_mid]
            engine = TxnEngine(spec.partitions, log=g.store, mode=cfg.mode)
            rng = random.Random(f"{cfg.seed}:head:{node_id}")
            self.head = HeadRunner(self, spec, engine, rng)
        self.parked: List[_Parked] = []
        self.nack_level: Dict[int, int] = {}
        self.mut = sim.mutations

    def __repr__(self):
        return f"Replica(id={self.node_id}, pos={self.position})"

    # -- message dispatch ----------------------------------------------------

    def on_message(self, msg, src: int) -> None:
        if isinstance(msg, Packet):
            if not self.recovering:
                self.handle_packet(msg)
        elif isinstance(msg, Nack):
            self.serve_nack(msg)
        elif isinstance(msg, Retransmit):
            self.apply_retransmit(msg)
        elif isinstance(msg, Fetch):
            self.serve_fetch(msg)
        elif isinstance(msg, FetchReply):
            self.install(msg)

    def on_timer(self, tag) -> None:
        if tag[0] == "nack":
            self._nack_timer(tag[1])

    def on_step(self) -> None:
        if self.head is not None:
            self.head.on_step()

    def crash(self) -> List[Packet]:
        """Fail-stop; returns the data packets that die with the node."""
        self.alive = False
        lost = [p.packet for p in self.parked]
        self.parked = []
        if self.head is not None:
            lost.extend(self.head.packets())
            self.head.active = []
            self.head.waiting.clear()
        return [p for p in lost if p.is_data]

    # -- replication ----------------------------------------------------------

    def handle_packet(self, packet: Packet) -> None:
        pb = packet.piggyback
        if pb is None:
            self.sim.lose(packet, self.node_id, "no-piggyback")
            return
        pending = None
        advanced: Optional[Set[int]] = None
        groups = self.groups
        for mid, pcl in list(pb.items()):
            g = groups.get(mid)
            if g is None or not g.ready:
                continue
            if pcl.epoch < g.gen and not self.mut.no_fence:
                if not pcl.pl.empty:
                    pb[mid] = PCL(mid, pcl.commit, empty_pl(pcl.commit), pcl.epoch)
                continue
            commit = pcl.commit
            if not vc_leq(commit, g.store.watermark):
                g.store.prune(commit)
            if g.is_head:
                continue
            pl = pcl.pl
            if self.mut.no_gate or vc_leq(pl.v1, g.max):
                if not pl.updates:
                    continue
                self._apply(g, pl)
                if advanced is None:
                    advanced = set()
                advanced.add(mid)
            else:
                if pending is None:
                    pending = set()
                pending.add(mid)
        if pending:
            self.parked.append(_Parked(packet, pending, self.sim.now))
            for mid in pending:
                self._arm_nack(mid)
        else:
            self.continue_packet(packet)
        if advanced and self.parked:
            self.drain(advanced)

    def process_pcl(self, pcl: PCL) -> bool:
        """Apply one PCL outside packet context; True if applied or nothing to do."""
        g = self.groups[pcl.middlebox]
        if not vc_leq(pcl.commit, g.store.watermark):
            g.store.prune(pcl.commit)
        if g.is_head:
            return True
        if vc_leq(pcl.pl.v1, g.max):
            self._apply(g, pcl.pl)
            return True
        return False

    def _apply(self, g: GroupReplica, pl: PiggybackLog) -> None:
        store = g.store
        v2 = pl.v2
        P = g.partitions
        sim = self.sim
        for k, v in pl.updates:
            p = partition_of(k, P)
            seq = v2[p]
            changed = store.put(k, v, seq, p)
            sim.on_log(self, g, k, v, seq, p, changed)
        old = g.max
        g.max = vc_merge(old, v2)
        if g.max != old:
            sim.monitor.on_max(self, g, old)

    def drain(self, advanced: Optional[Set[int]] = None) -> None:
        """Apply parked PLs whose gate opened; ``advanced`` limits the first pass."""
        groups = self.groups
        dirty = advanced
        while self.parked:
            applied: Set[int] = set()
            still = []
            ready = []
            for entry in self.parked:
                pending = entry.pending
                if dirty is None or not pending.isdisjoint(dirty):
                    pb = entry.packet.piggyback
                    for mid in list(pending):
                        g = groups[mid]
                        pl = pb[mid].pl
                        if vc_leq(pl.v1, g.max):
                            self._apply(g, pl)
                            pending.discard(mid)
                            applied.add(mid)
                if pending:
                    still.append(entry)
                else:
                    ready.append(entry)
            self.parked = still
            for entry in ready:
                self.continue_packet(entry.packet)
            if not applied:
                break
            dirty = applied

    def _arm_nack(self, mid: int) -> None:
        if mid in self.nack_level:
            return
        self.nack_level[mid] = 0
        self.sim.timer(self.node_id, self.cfg.nack_after, ("nack", mid))

    def _nack_timer(self, mid: int) -> None:
        if not self.alive:
            return
        needs = [e.packet.piggyback[mid].pl.v1 for e in self.parked if mid in e.pending]
        if not needs:
            self.nack_level.pop(mid, None)
            return
        g = self.groups[mid]
        msg = self.request_retransmit(mid, g.max, vc_join(needs))
        head = self.sim.dep.node_at(self.cfg.group(mid)[0])
        self.sim.send(self.node_id, head, msg)
        level = self.nack_level[mid] = min(self.nack_level[mid] + 1, 3)
        self.sim.timer(self.node_id, self.cfg.nack_after << level, ("nack", mid))

    def request_retransmit(self, mid: int, lo: VectorClock, hi: VectorClock) -> Nack:
        self.sim.stats["nacks"] += 1
        return Nack(mid, self.groups[mid].gen, lo, hi, self.node_id)

    def serve_nack(self, msg: Nack) -> None:
        g = self.groups.get(msg.middlebox)
        if g is None or not g.is_head or not g.ready or msg.epoch != g.gen:
            return
        reply = Retransmit(msg.middlebox, g.gen, msg.lo, msg.hi,
                           tuple(g.store.range(msg.lo, msg.hi)), g.store.watermark)
        self.sim.send(self.node_id, msg.requester, reply)

    def apply_retransmit(self, msg: Retransmit) -> None:
        g = self.groups.get(msg.middlebox)
        if g is None or not g.ready or g.is_head or msg.epoch != g.gen:
            return
        if vc_leq(msg.hi, g.max) or not vc_leq(msg.lo, g.max):
            return
        if not vc_leq(msg.pruned, msg.lo):
            # part of the range was pruned at the Head; only latest snapshots remain
            g.store.prune(tuple(min(a, b) for a, b in zip(msg.pruned, msg.hi)))
        sim = self.sim
        for e in msg.entries:
            changed = g.store.put(e.key, e.value, e.seq, e.partition)
            sim.on_log(self, g, e.key, e.value, e.seq, e.partition, changed)
        old = g.max
        g.max = vc_merge(old, msg.hi)
        if g.max != old:
            sim.monitor.on_max(self, g, old)
        if self.parked:
            self.drain({g.mid})

    # -- transaction + piggyback rewrite ---------------------------------------

    def continue_packet(self, packet: Packet) -> None:
        if packet.kind is PacketKind.DATA and self.head is not None:
            self.head.submit(packet)
        else:
            self.finish(packet, None, None, self.sim.now)

    def head_committed(self, packet: Packet, ctx, pl: PiggybackLog, action, t: int) -> None:
        g = self.groups[self.head_mid]
        old = g.max
        g.max = self.head.engine.max_clock()
        self.sim.on_commit(self, g, packet, pl, action, t)
        if g.max != old:
            self.sim.monitor.on_max(self, g, old)
        self.finish(packet, pl, action, t)

    def finish(self, packet: Packet, pl: Optional[PiggybackLog], action, t: int) -> None:
        pb = packet.piggyback
        mid = self.head_mid
        if mid is not None:
            g = self.groups[mid]
            prev = pb.get(mid)
            commit = prev.commit if prev is not None else vc_zero(g.partitions)
            if pl is None:
                pl = empty_pl(commit)
            pb[mid] = PCL(mid, commit, pl, g.gen)
        if not self.mut.no_tail_commit:
            for g in self.tail_groups:
                if g.ready:
                    pb[g.mid] = PCL(g.mid, g.max, empty_pl(g.max), g.gen)
        if action is not None and not isinstance(action, mbox.Forward):
            self.sim.filtered(packet, self.node_id, t)
            packet = Packet(self.sim.next_prop_id(), packet.flow_id, b"", pb,
                            PacketKind.PROPAGATING, t)
        self.sim.send(self.node_id, self.sim.dep.next_hop(self.position), packet, at=t)

    # -- recovery --------------------------------------------------------------

    def serve_fetch(self, msg: Fetch) -> None:
        g = self.groups.get(msg.middlebox)
        sim = self.sim
        # only a newer task for the same position supersedes a fetch
        key = (msg.middlebox, sim.nodes[msg.requester].position)
        if g is None or not g.ready or self.recovering or msg.epoch < self.fence.get(key, 0):
            sim.send(self.node_id, msg.requester,
                     FetchReply(msg.middlebox, msg.epoch, self.node_id, None, None, 0), reliable=True)
            return
        self.fence[key] = msg.epoch
        if msg.head_recovery and not self.mut.no_fence and msg.epoch > g.gen:
            self.set_group_epoch(msg.middlebox, msg.epoch)
        reply = FetchReply(msg.middlebox, msg.epoch, self.node_id, g.store.copy(), g.max, g.gen)
        sim.send(self.node_id, msg.requester, reply, reliable=True)

    def set_group_epoch(self, mid: int, epoch: int) -> None:
        """Adopt a new Head generation; parked packets waiting on the old one die."""
        g = self.groups[mid]
        if epoch <= g.gen:
            return
        g.gen = epoch
        keep = []
        for entry in self.parked:
            if mid in entry.pending and entry.packet.piggyback[mid].epoch < epoch:
                self.sim.lose(entry.packet, self.node_id, "fenced")
            else:
                keep.append(entry)
        self.parked = keep

    def install(self, msg: FetchReply) -> None:
        if not self.recovering:
            return
        self.sim.orch.on_fetch_reply(self, msg)

    def adopt(self, mid: int, store: LogStore, clock: VectorClock, gen: int) -> None:
        g = self.groups[mid]
        g.store = store
        g.max = clock
        g.gen = gen
        g.ready = True
        if g.is_head and self.head is not None:
            self.head.engine.recover(store, clock)
        self.sim.monitor.on_install(self, g)

    def discard(self, mid: int) -> None:
        g = self.groups[mid]
        g.ready = False
        g.store = LogStore(g.partitions)
        g.max = vc_zero(g.partitions)

    def activate(self) -> None:
        self.recovering = False

    @property
    def head_engine(self) -> Optional[TxnEngine]:
        return None if self.head is None else self.head.engine
