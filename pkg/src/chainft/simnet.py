"""Deterministic discrete-event network simulator.

Events run in ``(time, seq)`` order; every random choice comes from seeded
``random.Random`` streams, so a run is a pure function of its config, seed,
fault plan and workload. Links are lossy with uniform random latency;
reordering falls out of the latency spread. Crashes are fail-stop and
silence every message still in flight to or from the dead node.

Global invariants are checked incrementally as the run progresses (each log
write, ``MAX`` advance, state install and Buffer release is checked when it
happens); :func:`check_invariants` performs the same checks as a full scan.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import Counter
from dataclasses import dataclass
from itertools import count
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, Union

from . import mbox
from .core.config import ChainConfig
from .core.messages import Packet, PacketKind, PiggybackLog, message_size
from .core.partition import partition_of
from .core.vclock import VectorClock
from .endpoints import Buffer, Forwarder
from .node import GroupReplica, Replica
from .orch import ORCH, Deployment, Orchestrator

Target = Union[int, str]

_DELIVER, _TIMER, _STEP, _CRASH, _INJECT, _ORCH = range(6)


@dataclass(frozen=True)
class Mutations:
    """Test hooks that switch off one protocol mechanism each."""

    no_buffer_gate: bool = False
    no_gate: bool = False
    no_tail_commit: bool = False
    no_fence: bool = False

    @classmethod
    def named(cls, name: Optional[str]) -> "Mutations":
        if not name:
            return cls()
        return cls(**{name: True})


NAMES = ("no_buffer_gate", "no_gate", "no_tail_commit", "no_fence")


@dataclass(frozen=True)
class FaultPlan:
    crashes: Tuple[Tuple[int, Target], ...] = ()
    loss: float = 0.0
    dup: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss < 1.0:
            raise ValueError("loss must be in [0, 1)")
        if not 0.0 <= self.dup < 1.0:
            raise ValueError("dup must be in [0, 1)")

    def replica_crashes(self) -> int:
        return sum(1 for _, t in self.crashes if isinstance(t, int))


@dataclass(frozen=True)
class Workload:
    """Injection schedule: ``(time, flow_id)`` pairs sorted by time."""

    schedule: Tuple[Tuple[int, int], ...]
    payload: bytes = b""

    @property
    def last_time(self) -> int:
        return self.schedule[-1][0] if self.schedule else 0


@dataclass(frozen=True)
class Violation:
    time: int
    kind: str
    detail: str


# -- trace ------------------------------------------------------------------------

FIELDS: Dict[str, Tuple[str, ...]] = {
    "inject": ("time", "node", "packet_id", "flow_id"),
    "commit": ("time", "node", "middlebox", "epoch", "packet_id", "flow_id", "v1", "v2", "updates", "action"),
    "log": ("time", "node", "middlebox", "key", "value", "seq"),
    "deliver": ("time", "node", "src", "what", "id"),
    "release": ("time", "node", "packet_id", "flow_id"),
    "lost": ("time", "node", "packet_id", "reason"),
    "filtered": ("time", "node", "packet_id", "flow_id"),
    "crash": ("time", "node", "target"),
    "spawn": ("time", "position", "node", "epoch"),
    "reroute": ("time", "position", "node", "epoch", "recovery_ticks", "cut"),
}

ALWAYS = frozenset({"inject", "commit", "release", "lost", "filtered", "crash", "spawn", "reroute"})
FULL = frozenset(FIELDS)


def _jsonable(x):
    if isinstance(x, bytes):
        return x.hex()
    if isinstance(x, (tuple, list)):
        return [_jsonable(i) for i in x]
    return x


class Trace:
    def __init__(self, kinds: Iterable[str] = ALWAYS):
        self.kinds = frozenset(kinds)
        self.records: List[tuple] = []
        self.violations: List[Violation] = []
        self.stats: Counter = Counter()
        self.final: Dict[str, Any] = {}
        self.recoveries: list = []
        self.config: Optional[ChainConfig] = None
        self.events = 0

    def of(self, kind: str) -> List[tuple]:
        return [r for r in self.records if r[0] == kind]

    def hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for r in self.records:
            h.update(repr(r).encode())
            h.update(b"\n")
        return h.hexdigest()

    def to_ndjson(self) -> str:
        lines = []
        for r in self.records:
            names = FIELDS[r[0]]
            rec = {"event": r[0]}
            rec.update({k: _jsonable(v) for k, v in zip(names, r[1:])})
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def released(self) -> List[int]:
        return [r[3] for r in self.records if r[0] == "release"]

    @property
    def ok(self) -> bool:
        return not self.violations


# -- invariant monitor ---------------------------------------------------------

def _members(sim: "Simulator", mid: int) -> List[Tuple[Replica, GroupReplica]]:
    """Alive members of ``mid``'s group holding installed state, Head first."""
    out = []
    for node in sim.group_nodes[mid]:
        if node.alive:
            g = node.groups[mid]
            if g.ready:
                out.append((node, g))
    out.sort(key=lambda ng: ng[1].index)
    return out


class InvariantMonitor:
    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.f = sim.cfg.f
        self.writes: Dict[int, List[Tuple[int, bytes, int, bytes]]] = {}

    def _fail(self, kind: str, detail: str) -> None:
        self.sim.violation(kind, detail)

    def on_log(self, node: Replica, g: GroupReplica, key: bytes, value: bytes, seq: int, p: int, changed: bool) -> None:
        mid = g.mid
        mine = g.store.latest_seq(key)
        for other in self.sim.group_nodes[mid]:
            if other is node or not other.alive:
                continue
            og = other.groups[mid]
            if not og.ready:
                continue
            v = og.store.get(key, seq, p)
            if v is not None and v != value:
                self._fail("agreement", f"m{mid} key={key!r} seq={seq}: {node.node_id} vs {other.node_id}")
            if og.index < g.index and og.store.latest_seq(key) < mine:
                self._fail("log-propagation",
                           f"m{mid} key={key!r}: node {node.node_id} at {g.store.latest_seq(key)} "
                           f"ahead of predecessor {other.node_id} at {og.store.latest_seq(key)}")
        if not changed and g.store.get(key, seq, p) not in (None, value):
            self._fail("agreement", f"m{mid} key={key!r} seq={seq}: conflicting duplicate at {node.node_id}")

    def on_max(self, node: Replica, g: GroupReplica, old: VectorClock) -> None:
        new = g.max
        wm = g.store.watermark
        for p, (a, b) in enumerate(zip(old, new)):
            for s in range(max(a, wm[p]) + 1, b + 1):
                if not g.store.has_slot(p, s):
                    self._fail("max-consistency", f"m{g.mid} node {node.node_id}: seq {s} of partition {p} missing")
                    return

    def on_install(self, node: Replica, g: GroupReplica) -> None:
        for v in check_group(self.sim, g.mid):
            self.sim.violations.append(v)

    def on_commit(self, mid: int, packet_id: int, pl: PiggybackLog, partitions: int) -> None:
        if pl.updates:
            v2 = pl.v2
            w = [(mid, k, v2[partition_of(k, partitions)], v) for k, v in pl.updates]
            self.writes.setdefault(packet_id, []).extend(w)

    def on_release(self, packet_id: int) -> None:
        need = self.f + 1
        for mid, key, seq, value in self.writes.get(packet_id, ()):
            n = 0
            for node in self.sim.group_nodes[mid]:
                hit = node.groups[mid].store.latest(key)
                if hit is not None and (hit[1] > seq or (hit[1] == seq and hit[0] == value)):
                    n += 1
                    if n >= need:
                        break
            if n < need:
                self._fail("output-commit",
                           f"packet {packet_id}: m{mid} key={key!r} seq={seq} on {n} < {need} log stores")


def check_group(sim: "Simulator", mid: int) -> List[Violation]:
    out = []
    now = sim.now
    members = _members(sim, mid)
    for i, (node, g) in enumerate(members):
        store = g.store
        wm = store.watermark
        for p in range(g.partitions):
            for s in range(wm[p] + 1, g.max[p] + 1):
                if not store.has_slot(p, s):
                    out.append(Violation(now, "max-consistency", f"m{mid} node {node.node_id}: seq {s} of partition {p} missing"))
                    break
        for pnode, pg in members[:i]:
            for key in store.keys():
                if pg.store.latest_seq(key) < store.latest_seq(key):
                    out.append(Violation(now, "log-propagation",
                                         f"m{mid} key={key!r}: node {node.node_id} ahead of predecessor {pnode.node_id}"))
            for e in store.entries():
                v = pg.store.get(e.key, e.seq, e.partition)
                if v is not None and v != e.value:
                    out.append(Violation(now, "agreement", f"m{mid} key={e.key!r} seq={e.seq}"))
    return out


def check_invariants(sim: "Simulator") -> List[Violation]:
    """Full scan of log propagation, MAX-consistency and entry agreement."""
    out = []
    for mid in range(1, sim.cfg.n + 1):
        out.extend(check_group(sim, mid))
    return out


# -- simulator ------------------------------------------------------------------------

class Simulator:
    def __init__(self, cfg: ChainConfig, plan: FaultPlan = FaultPlan(), workload: Workload = Workload(()),
                 trace_kinds: Iterable[str] = ALWAYS, mutations: Mutations = Mutations(),
                 max_time: Optional[int] = None, stop_on_violation: bool = True, full_checks: bool = False):
        self.cfg = cfg
        self.plan = plan
        self.workload = workload
        self.mutations = mutations
        self.trace = Trace(trace_kinds)
        self.trace.config = cfg
        kinds = self.trace.kinds
        self._t_log = "log" in kinds
        self._t_deliver = "deliver" in kinds
        self.stop_on_violation = stop_on_violation
        self.full_checks = full_checks
        self.now = 0
        self.heap: list = []
        self._seq = count()
        self.inbox: Dict[int, List[int]] = {}
        self.global_times: List[int] = []
        self.nodes: Dict[int, Any] = {}
        self.group_nodes: Dict[int, List[Replica]] = {m: [] for m in range(1, cfg.n + 1)}
        self.crash_time: Dict[int, int] = {}
        self.stats: Counter = self.trace.stats
        self.violations = self.trace.violations
        self.outstanding: set = set()
        self._next_node = count(1)
        self._prop_ids = count(-1, -1)
        self._packet_ids = count(1)
        self.link_rng = random.Random(f"{cfg.seed}:links")
        self.loss = plan.loss
        self.dup = plan.dup
        self.lat = (cfg.latency_min, cfg.latency_max)
        self.monitor = InvariantMonitor(self)
        self.orch = Orchestrator(self, cfg)
        self.orch.alive = True
        self.orch.recovering = False
        self.nodes[ORCH] = self.orch
        self.dep: Deployment = self.orch.deploy()
        if max_time is None:
            max_time = workload.last_time + 60 * cfg.period + 40 * int(cfg.mean_latency)
            max_time += len(plan.crashes) * (cfg.detect_delay + cfg.init_delay + 20 * int(cfg.mean_latency))
        self.max_time = max_time
        self._inject_iter = iter(workload.schedule)
        self._injected_all = False
        self._schedule_next_inject()
        for t, target in plan.crashes:
            self._push(t, _CRASH, None, target, glob=True)
        self.pb_bytes = 0
        self.pb_count = 0

    # -- scheduling ----------------------------------------------------------------

    def _push(self, t: int, kind: int, target: Optional[int], payload, glob: bool = False) -> None:
        heapq.heappush(self.heap, (t, next(self._seq), kind, target, payload))
        if glob:
            heapq.heappush(self.global_times, t)
        elif target is not None and kind != _STEP:
            box = self.inbox.get(target)
            if box is None:
                box = self.inbox[target] = []
            heapq.heappush(box, t)

    def _schedule_next_inject(self) -> None:
        nxt = next(self._inject_iter, None)
        if nxt is None:
            self._injected_all = True
        else:
            self._push(nxt[0], _INJECT, None, nxt[1])

    def timer(self, node_id: int, delay: int, tag) -> None:
        self._push(self.now + delay, _TIMER, node_id, tag, glob=node_id == ORCH)

    def schedule_step(self, t: int, node_id: int) -> None:
        self._push(t, _STEP, node_id, None)

    def schedule_orch(self, t: int, fn: Callable, arg) -> None:
        self._push(t, _ORCH, None, (fn, arg), glob=True)

    def quiet_until(self, node_id: int) -> int:
        """Earliest time anything outside ``node_id`` can affect it."""
        bound = self.max_time + 1
        box = self.inbox.get(node_id)
        if box and box[0] < bound:
            bound = box[0]
        if self.global_times and self.global_times[0] < bound:
            bound = self.global_times[0]
        return bound

    def send(self, src: int, dst: int, msg, reliable: bool = False, at: Optional[int] = None) -> None:
        t0 = self.now if at is None else at
        rng = self.link_rng
        if not reliable and self.loss and rng.random() < self.loss:
            self.stats["link_loss"] += 1
            if isinstance(msg, Packet) and msg.kind is PacketKind.DATA:
                self.lose(msg, src, "link", t0)
            return
        lo, hi = self.lat
        self._push(t0 + rng.randint(lo, hi), _DELIVER, dst, (msg, src), glob=dst == ORCH)
        if (self.dup and not reliable and not (isinstance(msg, Packet) and msg.kind is PacketKind.DATA)
                and rng.random() < self.dup):
            copy = msg.clone() if isinstance(msg, Packet) else msg
            self.stats["dup"] += 1
            self._push(t0 + rng.randint(lo, hi), _DELIVER, dst, (copy, src), glob=dst == ORCH)

    # -- node lifecycle ----------------------------------------------------------------

    def spawn_replica(self, position: int, epoch: int, ready: bool) -> Replica:
        nid = next(self._next_node)
        node = Replica(self, nid, position, self.cfg, epoch, ready)
        self.nodes[nid] = node
        for mid in node.groups:
            self.group_nodes[mid].append(node)
        return node

    def spawn_forwarder(self) -> Forwarder:
        nid = next(self._next_node)
        node = Forwarder(self, nid, self.cfg)
        self.nodes[nid] = node
        return node

    def spawn_buffer(self, gens, cuts) -> Buffer:
        nid = next(self._next_node)
        node = Buffer(self, nid, self.cfg, gens, cuts)
        self.nodes[nid] = node
        return node

    def _crash(self, target: Target) -> None:
        dep = self.dep
        if target == "fwd":
            nid = dep.forwarder
        elif target == "buf":
            nid = dep.buffer
        else:
            task = self.orch.tasks.get(target)
            nid = task.node if task is not None else dep.positions[target]
        node = self.nodes[nid]
        if not node.alive:
            return
        for pkt in node.crash():
            self.lose(pkt, nid, "crash")
        self.crash_time[nid] = self.now
        self._record("crash", nid, target)
        self.orch.on_crash(nid)

    # -- hooks used by nodes ------------------------------------------------------------

    def next_prop_id(self) -> int:
        return next(self._prop_ids)

    def _record(self, kind: str, *fields) -> None:
        self.trace.records.append((kind, self.now) + fields)

    def trace_event(self, kind: str, *fields) -> None:
        self._record(kind, *fields)

    def violation(self, kind: str, detail: str) -> None:
        self.violations.append(Violation(self.now, kind, detail))

    def lose(self, packet: Packet, node_id: int, reason: str, t: Optional[int] = None) -> None:
        if packet.kind is not PacketKind.DATA:
            return
        if packet.packet_id in self.outstanding:
            self.outstanding.discard(packet.packet_id)
            self.stats["lost_" + reason] += 1
            self.trace.records.append(("lost", self.now if t is None else t, node_id, packet.packet_id, reason))

    def filtered(self, packet: Packet, node_id: int, t: int) -> None:
        self.outstanding.discard(packet.packet_id)
        self.stats["filtered"] += 1
        self.trace.records.append(("filtered", t, node_id, packet.packet_id, packet.flow_id))

    def release(self, buffer: Buffer, packet: Packet) -> None:
        if packet.packet_id not in self.outstanding:
            return
        self.outstanding.discard(packet.packet_id)
        self.stats["released"] += 1
        self._record("release", buffer.node_id, packet.packet_id, packet.flow_id)
        self.monitor.on_release(packet.packet_id)

    def on_log(self, node: Replica, g: GroupReplica, key: bytes, value: bytes, seq: int, p: int, changed: bool) -> None:
        if self._t_log and changed:
            self.trace.records.append(("log", self.now, node.node_id, g.mid, key, value, seq))
        self.monitor.on_log(node, g, key, value, seq, p, changed)

    def on_commit(self, node: Replica, g: GroupReplica, packet: Packet, pl: PiggybackLog, action, t: int) -> None:
        if self._t_log:
            v2 = pl.v2
            P = g.partitions
            for k, v in pl.updates:
                self.trace.records.append(("log", t, node.node_id, g.mid, k, v, v2[partition_of(k, P)]))
        act = "F" if action is None or isinstance(action, mbox.Forward) else "D"
        self.trace.records.append(("commit", t, node.node_id, g.mid, g.gen, packet.packet_id, packet.flow_id,
                                   pl.v1, pl.v2, pl.updates, act))
        self.monitor.on_commit(g.mid, packet.packet_id, pl, g.partitions)

    # -- main loop ---------------------------------------------------------------------

    def _deliver(self, dst: int, msg, src: int) -> None:
        node = self.nodes[dst]
        if not node.alive or not self.nodes[src].alive:
            if isinstance(msg, Packet):
                self.lose(msg, dst, "crash")
            return
        if self._t_deliver:
            if isinstance(msg, Packet):
                what, ident = msg.kind.value, msg.packet_id
            else:
                what, ident = type(msg).__name__, 0
            self._record("deliver", dst, src, what, ident)
        if isinstance(msg, Packet) and dst == self.dep.buffer and msg.piggyback is not None and msg.is_data:
            self.pb_bytes += message_size(msg.piggyback)
            self.pb_count += 1
        node.on_message(msg, src)

    def _inject(self, flow_id: int) -> None:
        pid = next(self._packet_ids)
        pkt = Packet(pid, flow_id, self.workload.payload, None, PacketKind.DATA, self.now)
        self.outstanding.add(pid)
        self.stats["injected"] += 1
        fwd = self.nodes[self.dep.forwarder]
        self._record("inject", fwd.node_id, pid, flow_id)
        if fwd.alive:
            fwd.on_inject(pkt)
        else:
            self.lose(pkt, fwd.node_id, "crash")
        self._schedule_next_inject()

    def run(self) -> Trace:
        heap = self.heap
        pop = heapq.heappop
        nodes = self.nodes
        inbox = self.inbox
        gtimes = self.global_times
        max_time = self.max_time
        events = 0
        while heap:
            t, _, kind, target, payload = pop(heap)
            if t > max_time:
                break
            self.now = t
            events += 1
            if kind == _DELIVER:
                if target == ORCH:
                    pop(gtimes)
                else:
                    pop(inbox[target])
                self._deliver(target, payload[0], payload[1])
            elif kind == _STEP:
                node = nodes[target]
                if node.alive:
                    node.on_step()
            elif kind == _TIMER:
                if target == ORCH:
                    pop(gtimes)
                else:
                    pop(inbox[target])
                node = nodes[target]
                if node.alive:
                    node.on_timer(payload)
            elif kind == _INJECT:
                self._inject(payload)
            elif kind == _CRASH:
                pop(gtimes)
                self._crash(payload)
            else:
                pop(gtimes)
                fn, arg = payload
                fn(arg)
            if self.full_checks:
                for v in check_invariants(self):
                    self.violations.append(v)
            if self.violations and self.stop_on_violation:
                break
            if self._injected_all and not self.outstanding and not self.orch.busy:
                break
        self.trace.events = events
        if self.outstanding and not (self.violations and self.stop_on_violation):
            self.violation("liveness", f"{len(self.outstanding)} packets neither released nor lost by t={self.now}")
        self._finalize()
        return self.trace

    def _finalize(self) -> None:
        tr = self.trace
        tr.recoveries = list(self.orch.records)
        tr.stats["events"] = tr.events
        tr.stats["coalesced"] = sum(getattr(n, "coalesced", 0) for n in self.nodes.values())
        tr.stats["wounds"] = sum(n.head.engine.wounds for n in self.nodes.values()
                                 if isinstance(n, Replica) and n.head is not None)
        heads = {}
        head_nodes = {}
        logs = {}
        for mid in range(1, self.cfg.n + 1):
            head = self.nodes[self.dep.positions[self.cfg.group(mid)[0]]]
            head_nodes[mid] = head.node_id
            heads[mid] = dict(head.head.engine.store.data) if head.alive else None
            for node, g in _members(self, mid):
                logs[(node.node_id, mid)] = {k: (v, s) for k, v, s in g.store.latest_items()}
        tr.final = {
            "time": self.now,
            "heads": heads,
            "head_nodes": head_nodes,
            "logs": logs,
            "route": tuple(self.dep.route()),
            "epoch": self.dep.epoch,
            "mean_piggyback_bytes": (self.pb_bytes / self.pb_count) if self.pb_count else 0.0,
        }


def run(config: ChainConfig, fault_plan: FaultPlan = FaultPlan(), workload: Workload = Workload(()),
        **kwargs) -> Trace:
    return Simulator(config, fault_plan, workload, **kwargs).run()
