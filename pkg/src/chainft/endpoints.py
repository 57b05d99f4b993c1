"""Chain endpoints: the Forwarder at ingress and the Buffer at egress.

The Forwarder attaches the oldest queued feedback message to each ingress
packet and, when ingress is idle for a timer period, emits a propagating
packet so state keeps flowing. The Buffer holds data packets until every
update they depend on is replicated ``f + 1`` times, releases them in per-flow
FIFO order, and sends piggyback feedback back to the Forwarder.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from typing import TYPE_CHECKING, Deque, Dict, List, Optional, Tuple

from .core.config import ChainConfig
from .core.messages import PCL, Packet, PacketKind, PiggybackMessage, empty_pl
from .core.vclock import VectorClock, vc_leq, vc_merge

if TYPE_CHECKING:
    from .simnet import Simulator


def coalesce(older: PiggybackMessage, newer: PiggybackMessage) -> PiggybackMessage:
    """Merge two feedback messages into one.

    Commit vectors merge elementwise. Of two piggyback logs the one not yet
    covered by the merged commit wins, the larger ``v2`` breaking ties; the
    dropped one is recovered by retransmission if a replica still needs it.
    """
    out = PiggybackMessage(older)
    for mid, pcl in newer.items():
        prev = out.get(mid)
        if prev is None:
            out[mid] = pcl
            continue
        commit = vc_merge(prev.commit, pcl.commit)
        keep = max((prev, pcl), key=lambda x: (not vc_leq(x.pl.v2, commit), sum(x.pl.v2)))
        if vc_leq(keep.pl.v2, commit):
            out[mid] = PCL(mid, commit, empty_pl(commit), max(prev.epoch, pcl.epoch))
        else:
            out[mid] = PCL(mid, commit, keep.pl, keep.epoch)
    return out


def collapse(msgs) -> PiggybackMessage:
    out = PiggybackMessage()
    for m in msgs:
        out = coalesce(out, m)
    return out


class Forwarder:
    def __init__(self, sim: "Simulator", node_id: int, cfg: ChainConfig):
        self.sim = sim
        self.node_id = node_id
        self.cfg = cfg
        self.alive = True
        self.queue: Deque[PiggybackMessage] = deque()
        self.capacity = cfg.queue_capacity
        self.last_feedback: Optional[PiggybackMessage] = None
        self.last_consume = sim.now
        self.coalesced = 0

    def start(self) -> None:
        self.sim.timer(self.node_id, self.cfg.period, ("fwd",))

    def _take(self) -> PiggybackMessage:
        if self.queue:
            return PiggybackMessage(self.queue.popleft())
        return PiggybackMessage()

    def ingress(self, packet: Packet) -> Packet:
        packet.piggyback = self._take()
        self.last_consume = self.sim.now
        return packet

    def feedback(self, msg: PiggybackMessage) -> None:
        self.last_feedback = msg
        if len(self.queue) >= self.capacity:
            self.coalesced += 1
            if len(self.queue) == 1:
                # capacity 1: fold the newcomer into the only slot
                self.queue.append(coalesce(self.queue.pop(), msg))
                return
            a = self.queue.popleft()
            b = self.queue.popleft()
            self.queue.appendleft(coalesce(a, b))
        self.queue.append(msg)

    def tick(self) -> Optional[Packet]:
        """Timer firing: a propagating packet if ingress has been idle a full period.

        The whole backlog goes out merged into one message, so an idle chain
        catches up in one circulation rather than one per period.
        """
        now = self.sim.now
        if now - self.last_consume < self.cfg.period:
            return None
        if self.queue:
            pb = collapse(self.queue)
            self.queue.clear()
        elif self.last_feedback is not None:
            pb = PiggybackMessage(self.last_feedback)
        else:
            pb = PiggybackMessage()
        self.last_consume = now
        return Packet(self.sim.next_prop_id(), 0, b"", pb, PacketKind.PROPAGATING, now)

    # -- simulator glue --------------------------------------------------------

    def on_message(self, msg, src: int) -> None:
        if isinstance(msg, PiggybackMessage):
            self.feedback(msg)

    def on_inject(self, packet: Packet) -> None:
        self.sim.send(self.node_id, self.sim.dep.next_hop(0), self.ingress(packet))

    def on_timer(self, tag) -> None:
        pkt = self.tick()
        if pkt is not None:
            self.sim.send(self.node_id, self.sim.dep.next_hop(0), pkt)
        now = self.sim.now
        self.sim.timer(self.node_id, max(1, self.last_consume + self.cfg.period - now), ("fwd",))

    def crash(self) -> List[Packet]:
        self.alive = False
        return []


class _Held:
    __slots__ = ("packet", "reqs", "arrived")

    def __init__(self, packet: Packet, reqs: Dict[int, Tuple[VectorClock, int]], arrived: int):
        self.packet = packet
        self.reqs = reqs
        self.arrived = arrived


class Buffer:
    def __init__(self, sim: "Simulator", node_id: int, cfg: ChainConfig,
                 gens: Optional[Dict[int, int]] = None,
                 cuts: Optional[Dict[int, List[Tuple[int, VectorClock]]]] = None):
        self.sim = sim
        self.node_id = node_id
        self.cfg = cfg
        self.alive = True
        self.held: "OrderedDict[int, _Held]" = OrderedDict()
        # per-flow FIFO of held packets; only queue heads are ever tested
        self.flows: Dict[int, Deque[_Held]] = {}
        self.dirty = False
        self.commit_known: Dict[int, VectorClock] = {}
        # per middlebox: join of the v2 vectors awaited by held packets
        self.need: Dict[int, VectorClock] = {}
        self.gen: Dict[int, int] = dict(gens or {})
        self.cuts: Dict[int, List[Tuple[int, VectorClock]]] = {m: list(c) for m, c in (cuts or {}).items()}
        self.fenced = not sim.mutations.no_fence
        self.gated = not sim.mutations.no_buffer_gate

    def _survives(self, mid: int, pcl: PCL) -> bool:
        """A PL from an old Head generation survives only below every later cut."""
        if not self.fenced or pcl.epoch >= self.gen.get(mid, 0):
            return True
        v2 = pcl.pl.v2
        return all(vc_leq(v2, r) for e, r in self.cuts.get(mid, ()) if e > pcl.epoch)

    def egress(self, packet: Packet) -> Tuple[List[Packet], Optional[PiggybackMessage]]:
        """Absorb one packet; returns (released packets, feedback or None)."""
        pb = packet.piggyback or PiggybackMessage()
        known = self.commit_known
        fresh: Dict[int, PCL] = {}
        reqs: Dict[int, Tuple[VectorClock, int]] = {}
        doomed = False
        for mid, pcl in pb.items():
            prev = known.get(mid)
            if prev is None:
                known[mid] = pcl.commit
                self.dirty = True
            elif prev != pcl.commit:
                merged = vc_merge(prev, pcl.commit)
                if merged != prev:
                    known[mid] = merged
                    self.dirty = True
            if pcl.pl.empty:
                continue
            if not self._survives(mid, pcl):
                doomed = True
                continue
            fresh[mid] = pcl
            reqs[mid] = (pcl.pl.v2, pcl.epoch)
        if packet.is_data:
            if doomed and self.fenced:
                self.sim.lose(packet, self.node_id, "lost-history")
            else:
                h = _Held(packet, reqs, self.sim.now)
                self.held[packet.packet_id] = h
                q = self.flows.get(packet.flow_id)
                if q is None:
                    self.flows[packet.flow_id] = deque((h,))
                    self.dirty = True
                else:
                    q.append(h)
                need = self.need
                for mid, (v2, _) in reqs.items():
                    prev = need.get(mid)
                    need[mid] = v2 if prev is None else vc_merge(prev, v2)
        released = self._scan()
        fb = None
        if packet.is_data or self.held:
            fb = PiggybackMessage()
            for mid, c in known.items():
                src = fresh.get(mid)
                if src is not None:
                    fb[mid] = PCL(mid, c, src.pl, src.epoch)
                else:
                    need = self.need.get(mid)
                    if need is not None and not vc_leq(need, c):
                        # repair: replicas short of ``need`` fetch the gap from the Head
                        fb[mid] = PCL(mid, c, empty_pl(need), self.gen.get(mid, 0))
                    else:
                        fb[mid] = PCL(mid, c, empty_pl(c), self.gen.get(mid, 0))
        return released, fb

    def _scan(self) -> List[Packet]:
        out: List[Packet] = []
        if not self.dirty:
            return out
        self.dirty = False
        known = self.commit_known
        gated = self.gated
        held = self.held
        for flow, q in list(self.flows.items()):
            while q:
                h = q[0]
                if gated:
                    ok = True
                    for mid, (v2, _) in h.reqs.items():
                        c = known.get(mid)
                        if c is None or not vc_leq(v2, c):
                            ok = False
                            break
                    if not ok:
                        break
                q.popleft()
                del held[h.packet.packet_id]
                out.append(h.packet)
            if not q:
                del self.flows[flow]
        return out

    def notify_recovery(self, mid: int, epoch: int, cut: VectorClock) -> None:
        """A Head of ``mid`` was replaced; history beyond ``cut`` is gone."""
        if not self.fenced:
            return
        self.gen[mid] = max(self.gen.get(mid, 0), epoch)
        self.cuts.setdefault(mid, []).append((epoch, cut))
        for pid, h in list(self.held.items()):
            req = h.reqs.get(mid)
            if req is None or req[1] >= epoch:
                continue
            if vc_leq(req[0], cut):
                h.reqs[mid] = (req[0], epoch)
            else:
                del self.held[pid]
                self.sim.lose(h.packet, self.node_id, "lost-history")
        self._rebuild_flows()
        need = None
        for h in self.held.values():
            req = h.reqs.get(mid)
            if req is not None:
                need = req[0] if need is None else vc_merge(need, req[0])
        if need is None:
            self.need.pop(mid, None)
        else:
            self.need[mid] = need
        for pkt in self._scan():
            self.sim.release(self, pkt)

    def _rebuild_flows(self) -> None:
        flows: Dict[int, Deque[_Held]] = {}
        for h in self.held.values():
            flows.setdefault(h.packet.flow_id, deque()).append(h)
        self.flows = flows
        self.dirty = True

    # -- simulator glue --------------------------------------------------------

    def on_message(self, msg, src: int) -> None:
        if not isinstance(msg, Packet):
            return
        released, fb = self.egress(msg)
        for pkt in released:
            self.sim.release(self, pkt)
        if fb is not None:
            self.sim.send(self.node_id, self.sim.dep.forwarder, fb)

    def on_timer(self, tag) -> None:
        pass

    def crash(self) -> List[Packet]:
        self.alive = False
        lost = [h.packet for h in self.held.values()]
        self.held.clear()
        self.flows.clear()
        return lost
