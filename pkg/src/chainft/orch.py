"""Deployment and failure recovery.

Recovery of a replica position runs in three steps: spawn a replacement with
a fresh epoch, fetch every group's log store from a donor, and once all
recovering replicas have acknowledged, reroute from the Tail-most position
toward the Head-most and announce the new Head generations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple

from .core.config import ChainConfig
from .core.vclock import VectorClock
from .node import AckRecovered, Fetch, FetchReply, Replica

if TYPE_CHECKING:
    from .simnet import Simulator

ORCH = 0


@dataclass
class Deployment:
    epoch: int
    positions: Dict[int, int]
    forwarder: int
    buffer: int
    groups: Dict[int, List[int]]
    n_eff: int

    def node_at(self, position: int) -> int:
        return self.positions[position]

    def next_hop(self, position: int) -> int:
        """Successor of ``position`` (0 is the Forwarder)."""
        if position >= self.n_eff:
            return self.buffer
        return self.positions[position + 1]

    def route(self) -> List[int]:
        return [self.forwarder] + [self.positions[p] for p in range(1, self.n_eff + 1)] + [self.buffer]


@dataclass
class RecoveryTask:
    position: int
    node: int
    epoch: int
    crashed_at: int
    detected_at: int
    fetching: Dict[int, int] = field(default_factory=dict)
    done: Dict[int, Tuple[int, int]] = field(default_factory=dict)  # mid -> (donor, time)
    acked: bool = False


@dataclass(frozen=True)
class RecoveryRecord:
    target: str
    position: int
    node: int
    epoch: int
    crashed_at: int
    detected_at: int
    rerouted_at: int
    fetches: Tuple[Tuple[int, int, int], ...]  # (mid, donor, completed_at)

    @property
    def ticks(self) -> int:
        return self.rerouted_at - self.crashed_at


class Orchestrator:
    def __init__(self, sim: "Simulator", cfg: ChainConfig):
        self.sim = sim
        self.cfg = cfg
        self.epoch = 0
        self.tasks: Dict[int, RecoveryTask] = {}
        self.group_gen: Dict[int, int] = {}
        self.cuts: Dict[int, List[Tuple[int, VectorClock]]] = {}
        self.records: List[RecoveryRecord] = []
        self.pending = 0  # detections and endpoint spawns in flight
        self.dep: Optional[Deployment] = None

    @property
    def busy(self) -> bool:
        return bool(self.tasks) or self.pending > 0

    # -- deployment ------------------------------------------------------------

    def deploy(self) -> Deployment:
        cfg = self.cfg
        self.epoch = 1
        sim = self.sim
        positions = {}
        for p in range(1, cfg.n_eff + 1):
            positions[p] = sim.spawn_replica(p, self.epoch, ready=True).node_id
        self.group_gen = {mid: self.epoch for mid in range(1, cfg.n + 1)}
        fwd = sim.spawn_forwarder()
        buf = sim.spawn_buffer(dict(self.group_gen), {})
        self.dep = Deployment(self.epoch, positions, fwd.node_id, buf.node_id, cfg.groups(), cfg.n_eff)
        fwd.start()
        return self.dep

    # -- detection ---------------------------------------------------------------

    def on_crash(self, node_id: int) -> None:
        self.pending += 1
        self.sim.schedule_orch(self.sim.now + self.cfg.detect_delay, self.on_detect, node_id)

    def on_detect(self, node_id: int) -> None:
        self.pending -= 1
        sim = self.sim
        dep = self.dep
        node = sim.nodes[node_id]
        now = sim.now
        crashed_at = sim.crash_time[node_id]
        if node_id == dep.forwarder or node_id == dep.buffer:
            self.pending += 1
            sim.schedule_orch(now + self.cfg.init_delay, self.recover_endpoint, node_id)
            return
        if not isinstance(node, Replica):
            return
        pos = node.position
        task = self.tasks.get(pos)
        if task is not None and task.node == node_id:
            # the replacement itself died: start over with a new one
            self._start(pos, task.crashed_at, now)
        elif dep.positions.get(pos) == node_id and pos not in self.tasks:
            self._start(pos, crashed_at, now)
        for t in list(self.tasks.values()):
            for mid, donor in list(t.fetching.items()):
                if donor == node_id:
                    self._fetch(t, mid)

    # -- replica recovery --------------------------------------------------------

    def _start(self, position: int, crashed_at: int, detected_at: int) -> None:
        self.epoch += 1
        node = self.sim.spawn_replica(position, self.epoch, ready=False)
        task = RecoveryTask(position, node.node_id, self.epoch, crashed_at, detected_at)
        self.tasks[position] = task
        self.sim.trace_event("spawn", position, node.node_id, self.epoch)
        self.sim.schedule_orch(detected_at + self.cfg.init_delay, self._init_done, (position, task.epoch))

    def _init_done(self, arg) -> None:
        position, epoch = arg
        task = self.tasks.get(position)
        if task is None or task.epoch != epoch:
            return
        for mid in sorted(self.sim.nodes[task.node].groups):
            self._fetch(task, mid)

    def donors(self, mid: int, position: int) -> List[int]:
        members = self.cfg.group(mid)
        idx = members.index(position)
        if idx == 0:
            order = members[1:]
        else:
            order = list(reversed(members[:idx])) + members[idx + 1:]
        out = []
        for p in order:
            if p in self.tasks:
                continue
            nid = self.dep.positions[p]
            n = self.sim.nodes[nid]
            if n.alive and not n.recovering and n.groups[mid].ready:
                out.append(nid)
        return out

    def _fetch(self, task: RecoveryTask, mid: int) -> None:
        node = self.sim.nodes[task.node]
        if not node.alive:
            return
        if node.groups[mid].ready:
            node.discard(mid)
        cands = self.donors(mid, task.position)
        if not cands:
            task.fetching.pop(mid, None)
            self.sim.schedule_orch(self.sim.now + int(self.cfg.mean_latency), self._retry, (task.position, task.epoch, mid))
            return
        donor = cands[0]
        task.fetching[mid] = donor
        head_recovery = self.cfg.group(mid)[0] == task.position
        self.sim.send(task.node, donor, Fetch(mid, task.epoch, head_recovery, task.node), reliable=True)

    def _retry(self, arg) -> None:
        position, epoch, mid = arg
        task = self.tasks.get(position)
        if task is not None and task.epoch == epoch and mid not in task.done:
            self._fetch(task, mid)

    def on_fetch_reply(self, node: Replica, msg: FetchReply) -> None:
        task = self.tasks.get(node.position)
        if task is None or task.node != node.node_id or msg.epoch != task.epoch:
            return
        if task.fetching.get(msg.middlebox) != msg.donor:
            return
        if msg.store is None:
            self.sim.schedule_orch(self.sim.now + int(self.cfg.mean_latency), self._retry,
                                   (task.position, task.epoch, msg.middlebox))
            del task.fetching[msg.middlebox]
            return
        head_recovery = self.cfg.group(msg.middlebox)[0] == task.position
        gen = task.epoch if head_recovery else max(msg.gen, self.group_gen.get(msg.middlebox, 0))
        node.adopt(msg.middlebox, msg.store, msg.max, gen)
        del task.fetching[msg.middlebox]
        task.done[msg.middlebox] = (msg.donor, self.sim.now)
        if len(task.done) == len(node.groups):
            self.sim.send(node.node_id, ORCH, AckRecovered(task.position, node.node_id, task.epoch), reliable=True)

    def on_message(self, msg, src: int) -> None:
        if not isinstance(msg, AckRecovered):
            return
        task = self.tasks.get(msg.position)
        if task is None or task.node != msg.node or task.epoch != msg.epoch:
            return
        task.acked = True
        if all(t.acked for t in self.tasks.values()):
            self.reroute()

    def reroute(self) -> None:
        sim = self.sim
        dep = self.dep
        now = sim.now
        order = sorted(self.tasks.values(), key=lambda t: -t.position)
        for t in order:
            dep.positions[t.position] = t.node
            sim.nodes[t.node].activate()
        buf = sim.nodes[dep.buffer]
        cuts = {}
        for t in order:
            mid = t.position
            if mid > self.cfg.n:
                continue
            cut = cuts[mid] = sim.nodes[t.node].groups[mid].max
            self.group_gen[mid] = t.epoch
            self.cuts.setdefault(mid, []).append((t.epoch, cut))
            for p in self.cfg.group(mid):
                n = sim.nodes[dep.positions[p]]
                if n.alive:
                    n.set_group_epoch(mid, t.epoch)
            if buf.alive:
                buf.notify_recovery(mid, t.epoch, cut)
        dep.epoch = self.epoch
        for t in order:
            rec = RecoveryRecord("replica", t.position, t.node, t.epoch, t.crashed_at, t.detected_at, now,
                                 tuple((m, d, at) for m, (d, at) in sorted(t.done.items())))
            self.records.append(rec)
            sim.trace_event("reroute", t.position, t.node, t.epoch, rec.ticks, cuts.get(t.position, ()))
        self.tasks.clear()

    # -- endpoints ----------------------------------------------------------------

    def recover_endpoint(self, node_id: int) -> None:
        self.pending -= 1
        sim = self.sim
        dep = self.dep
        self.epoch += 1
        dep.epoch = self.epoch
        if node_id == dep.forwarder:
            new = sim.spawn_forwarder()
            dep.forwarder = new.node_id
            new.start()
            target = "forwarder"
        else:
            new = sim.spawn_buffer(dict(self.group_gen), self.cuts)
            dep.buffer = new.node_id
            target = "buffer"
        crashed_at = sim.crash_time[node_id]
        rec = RecoveryRecord(target, 0, new.node_id, self.epoch, crashed_at,
                             crashed_at + self.cfg.detect_delay, sim.now, ())
        self.records.append(rec)
        sim.trace_event("reroute", 0, new.node_id, self.epoch, rec.ticks, ())
