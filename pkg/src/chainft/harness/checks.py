"""Post-run correctness checks and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .. import mbox
from ..simnet import Trace
from .oracle import OracleError, OracleResult, oracle_replay

SAFETY = ("log-propagation", "max-consistency", "agreement")


@dataclass
class Report:
    checks: Dict[str, Tuple[bool, str]] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks[name] = (ok, detail)

    @property
    def ok(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    @property
    def failures(self) -> List[str]:
        return [f"{k}: {d}" for k, (ok, d) in self.checks.items() if not ok]

    def lines(self) -> List[str]:
        return [f"{'PASS' if ok else 'FAIL'} {k}" + (f" ({d})" if d else "") for k, (ok, d) in self.checks.items()]


def _violations(trace: Trace, kinds) -> List[str]:
    return [f"t={v.time} {v.kind}: {v.detail}" for v in trace.violations if v.kind in kinds]


def _summary(v: List[str]) -> str:
    if not v:
        return ""
    return f"{len(v)} violation(s), first: {v[0]}"


def check_run(trace: Trace, oracle: Optional[OracleResult] = None, mode: str = "all",
              expect_delivery: bool = False) -> Report:
    """Evaluate every correctness property of one run.

    ``mode="fast"`` skips the serial oracle and state comparisons.
    """
    rep = Report()
    st = trace.stats
    v = _violations(trace, SAFETY)
    rep.add("invariants", not v, _summary(v))
    v = _violations(trace, ("output-commit",))
    rep.add("output_commit", not v, _summary(v))
    v = _violations(trace, ("liveness",))
    rep.add("liveness", not v, _summary(v))
    if expect_delivery:
        want = st["injected"] - st["filtered"]
        rep.add("delivery", st["released"] == want, f"released {st['released']} of {want}")
    if mode == "all" and not trace.violations:
        _deep_checks(trace, oracle, rep)
    rep.metrics = {
        "packets_injected": st["injected"],
        "packets_released": st["released"],
        "mean_piggyback_bytes": round(trace.final.get("mean_piggyback_bytes", 0.0), 3),
        "recovery_ticks": max((r.ticks for r in trace.recoveries), default=0),
        "violations": len(trace.violations) + sum(
            1 for k, (ok, _) in rep.checks.items() if not ok and k not in ("invariants", "output_commit", "liveness")),
    }
    return rep


def _deep_checks(trace: Trace, oracle: Optional[OracleResult], rep: Report) -> None:
    cfg = trace.config
    try:
        oracle = oracle or oracle_replay(trace)
    except OracleError as e:
        rep.add("oracle_replay", False, str(e))
        return
    rep.add("oracle_replay", not oracle.mismatches,
            f"{len(oracle.mismatches)} mismatch(es), first: {oracle.mismatches[0]}" if oracle.mismatches else "")

    heads = trace.final["heads"]
    bad = [m for m, st in oracle.state.items() if heads.get(m) is not None and heads[m] != st]
    rep.add("final_state", not bad, f"middleboxes {bad} differ from oracle" if bad else "")

    released = trace.released()
    committed_by: Dict[int, set] = {}
    for r in trace.records:
        if r[0] == "commit":
            committed_by.setdefault(r[5], set()).add(r[3])
    lost = []
    for pid in released:
        for mid in committed_by.get(pid, ()):
            if pid not in oracle.survivors[mid]:
                lost.append((pid, mid))
    rep.add("released_survive", not lost,
            f"{len(lost)} released packet(s) lost in recovery, first {lost[0]}" if lost else "")

    logs = trace.final["logs"]
    head_nodes = trace.final["head_nodes"]
    stale = []
    for pid in released:
        for mid, key, seq, _ in oracle.writes.get(pid, ()):
            log = logs.get((head_nodes[mid], mid))
            if log is None:
                continue
            hit = log.get(key)
            if hit is None or hit[1] < seq:
                stale.append((pid, mid, key))
    rep.add("recovered_versions", not stale,
            f"{len(stale)} released write(s) missing after recovery, first {stale[0]}" if stale else "")

    bad = []
    for mid, spec in enumerate(cfg.middleboxes, 1):
        if spec.kind != "monitor":
            continue
        st = oracle.state[mid]
        per_flow = sum(mbox.read_u64(v) for k, v in st.items() if k.startswith(b"flow:"))
        shared = sum(mbox.read_u64(v) for k, v in st.items() if k.startswith(b"shared:"))
        live = heads.get(mid)
        live_shared = None if live is None else sum(mbox.read_u64(v) for k, v in live.items() if k.startswith(b"shared:"))
        n = oracle.forwarded[mid]
        if not (per_flow == shared == n) or (live_shared is not None and live_shared != n):
            bad.append(f"m{mid}: flows={per_flow} shared={shared} live_shared={live_shared} commits={n}")
    rep.add("monitor_totals", not bad, "; ".join(bad))
