"""Independent serial oracle.

Rebuilds each middlebox's expected state from the trace alone: take the
committed transactions that survived every Head recovery, order them by
their ``v2`` vectors, and re-run the middlebox logic one packet at a time on
a plain dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Set, Tuple

from .. import mbox
from ..core.partition import partition_of
from ..core.vclock import VectorClock, vc_leq
from ..simnet import Trace

Write = Tuple[int, bytes, int, bytes]  # (middlebox, key, seq, value)


class OracleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    state: Dict[int, Dict[bytes, bytes]]
    order: Dict[int, List[int]]
    survivors: Dict[int, Set[int]]
    writes: Dict[int, List[Write]]
    forwarded: Dict[int, int]
    mismatches: List[str] = field(default_factory=list)


def head_cuts(trace: Trace) -> Dict[int, List[Tuple[int, VectorClock]]]:
    """``middlebox -> [(epoch, cut)]`` for every Head replacement in the trace."""
    out: Dict[int, List[Tuple[int, VectorClock]]] = {}
    for r in trace.records:
        if r[0] == "reroute" and r[6]:
            out.setdefault(r[2], []).append((r[4], r[6]))
    return out


def surviving_commits(trace: Trace) -> Dict[int, List[tuple]]:
    cuts = head_cuts(trace)
    n = trace.config.n
    out: Dict[int, List[tuple]] = {m: [] for m in range(1, n + 1)}
    for r in trace.records:
        if r[0] != "commit":
            continue
        mid, epoch, v2 = r[3], r[4], r[8]
        if all(vc_leq(v2, cut) for e, cut in cuts.get(mid, ()) if e > epoch):
            out[mid].append(r)
    return out


def _order_key(r: tuple):
    # writers before read-only transactions at equal sums; ties by packet id
    return (sum(r[8]), 0 if r[9] else 1, r[5])


def oracle_replay(trace: Trace) -> OracleResult:
    cfg = trace.config
    surv = surviving_commits(trace)
    result = OracleResult({}, {}, {}, {}, {})
    for mid, commits in surv.items():
        spec = cfg.middleboxes[mid - 1]
        P = spec.partitions
        commits = sorted(commits, key=_order_key)
        seen: Set[int] = set()
        state: Dict[bytes, bytes] = {}
        order = []
        forwarded = 0
        for r in commits:
            pid, flow, v2, updates, act = r[5], r[6], r[8], r[9], r[10]
            if pid in seen:
                raise OracleError(f"m{mid}: packet {pid} committed twice in surviving history")
            seen.add(pid)
            order.append(pid)
            sess = mbox.DictSession(state)
            action = mbox.run_program(mbox.program(spec, flow, pid, b""), sess)
            code = "F" if isinstance(action, mbox.Forward) else "D"
            if code == "F":
                forwarded += 1
            if code != act:
                result.mismatches.append(f"m{mid} packet {pid}: action {act} recorded, oracle says {code}")
            if sess.writes != dict(updates):
                result.mismatches.append(f"m{mid} packet {pid}: writes differ from serial replay")
            for k, v in updates:
                result.writes.setdefault(pid, []).append((mid, k, v2[partition_of(k, P)], v))
        result.state[mid] = state
        result.order[mid] = order
        result.survivors[mid] = seen
        result.forwarded[mid] = forwarded
    return result
