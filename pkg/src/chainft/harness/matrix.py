"""Single runs, scenario grids and the metrics CSV."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from ..core.config import ChainConfig
from ..mbox import MiddleboxSpec
from ..simnet import ALWAYS, FaultPlan, Mutations, Simulator, Trace
from .checks import Report, check_run
from .config import ExperimentConfig, WorkloadSpec
from .traffic import generate_traffic

CSV_COLUMNS = ("scenario_id", "seed", "packets_injected", "packets_released",
               "mean_piggyback_bytes", "recovery_ticks", "violations")


@dataclass
class Outcome:
    exp: ExperimentConfig
    trace: Trace
    report: Report

    @property
    def ok(self) -> bool:
        return self.report.ok

    def row(self) -> dict:
        m = self.report.metrics
        return {"scenario_id": self.exp.scenario_id, "seed": self.exp.seed,
                **{k: m[k] for k in CSV_COLUMNS[2:]}}


def simulate(exp: ExperimentConfig, trace_kinds=ALWAYS, **kwargs) -> Trace:
    workload = generate_traffic(exp.workload, exp.seed)
    sim = Simulator(exp.chain, exp.faults, workload, trace_kinds=trace_kinds,
                    mutations=Mutations.named(exp.mutation), **kwargs)
    return sim.run()


def run_experiment(exp: ExperimentConfig, trace_kinds=ALWAYS, **kwargs) -> Outcome:
    trace = simulate(exp, trace_kinds, **kwargs)
    expect = exp.faults.loss == 0 and not exp.faults.crashes
    return Outcome(exp, trace, check_run(trace, mode=exp.check, expect_delivery=expect))


def to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_outputs(out_dir: str, outcomes: Sequence[Outcome], ndjson: bool = True) -> None:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "metrics.csv").write_text(to_csv(o.row() for o in outcomes))
    if ndjson:
        for o in outcomes:
            (path / f"{o.exp.scenario_id}.ndjson").write_text(o.trace.to_ndjson())
    lines = []
    for o in outcomes:
        lines.append(f"[{o.exp.scenario_id}] {'PASS' if o.ok else 'FAIL'} trace={o.trace.hash()}")
        lines.extend("  " + l for l in o.report.lines())
    (path / "report.txt").write_text("\n".join(lines) + "\n")


# -- scenario grids ---------------------------------------------------------------

def ch_rec(f: int, seed: int = 0, **chain_kw) -> ChainConfig:
    """Firewall -> Monitor -> SimpleNAT."""
    specs = (
        MiddleboxSpec("firewall", partitions=1),
        MiddleboxSpec("monitor", partitions=4),
        MiddleboxSpec("simplenat", partitions=2),
    )
    return ChainConfig(specs, f=f, seed=seed, **chain_kw)


def crash_times(workload: WorkloadSpec, count: int = 5) -> List[int]:
    """``count`` instants spread across the injection window."""
    span = workload.packets * workload.inter_arrival
    return [span * (i + 1) // (count + 1) for i in range(count)]


def recovery_grid(base: ExperimentConfig, fs: Sequence[int] = (1, 2), seeds: Sequence[int] = (0,),
                  times: Optional[Sequence[int]] = None) -> List[ExperimentConfig]:
    """Every replica position x crash times x ``fs`` x seeds on the Ch-Rec chain."""
    times = list(times) if times is not None else crash_times(base.workload)
    out = []
    for f in fs:
        for seed in seeds:
            chain = ch_rec(f, seed, latency_min=base.chain.latency_min, latency_max=base.chain.latency_max)
            for pos in range(1, chain.n_eff + 1):
                for t in times:
                    out.append(replace(base, chain=chain,
                                       faults=FaultPlan(((t, pos),), base.faults.loss, base.faults.dup),
                                       scenario_id=f"rec-f{f}-s{seed}-r{pos}@{t}"))
    return out


def commit_grid(base: ExperimentConfig, ns: Sequence[int] = (2, 3, 4, 5), fs: Sequence[int] = (0, 1, 2),
                losses: Sequence[float] = (0.0, 0.01, 0.05), seeds: Sequence[int] = (0, 1, 2)) -> List[ExperimentConfig]:
    """Monitor chains of every length x f x loss x seed."""
    out = []
    for n in ns:
        for f in fs:
            for loss in losses:
                for seed in seeds:
                    chain = ChainConfig(tuple(MiddleboxSpec("monitor") for _ in range(n)), f=f, seed=seed)
                    out.append(replace(base, chain=chain, faults=FaultPlan((), loss),
                                       scenario_id=f"oc-n{n}-f{f}-p{loss}-s{seed}"))
    return out


def run_matrix(scenarios: Iterable[ExperimentConfig], jobs: int = 1) -> List[Outcome]:
    """Run every scenario; ``jobs > 1`` spreads them over worker processes."""
    scenarios = list(scenarios)
    if jobs <= 1 or len(scenarios) < 2:
        return [run_experiment(s) for s in scenarios]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_experiment, scenarios))
