"""Command-line entry point: ``chainft run|matrix|replay|fmt-check``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from ..core.messages import (PCL, DecodeError, PiggybackLog, PiggybackMessage, decode_piggyback,
                             encode_piggyback, message_size, pcl_size)
from ..core.partition import partition_of
from ..simnet import ALWAYS, FULL, NAMES
from .config import ConfigError, ExperimentConfig, default_config, load_config, with_overrides
from .matrix import commit_grid, recovery_grid, run_experiment, run_matrix, simulate, write_outputs


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config (default: built-in Ch-Rec chain)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--loss", type=float, help="per-link loss probability in [0, 1)")
    p.add_argument("--fail", action="append", default=[], metavar="POSITION@TICK",
                   help="crash a replica position (or fwd/buf) at a tick; repeatable")
    p.add_argument("--out", help="directory for metrics.csv, report.txt and NDJSON traces")
    p.add_argument("--check", choices=("all", "fast"), help="fast skips the serial oracle")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chainft", description="Fault-tolerant chain simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run one experiment and check it")
    _common(p)
    p.add_argument("--mutation", choices=NAMES, help="disable one protocol mechanism (test hook)")

    p = sub.add_parser("matrix", help="run a failure-scenario grid")
    _common(p)
    p.add_argument("--grid", choices=("recovery", "commit"), default="recovery")
    p.add_argument("--seeds", type=int, default=1, help="seeds per grid cell")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent scenarios")

    p = sub.add_parser("replay", help="check that a run reproduces its trace exactly")
    _common(p)
    p.add_argument("--repeat", type=int, default=2)
    p.add_argument("--trace", help="NDJSON trace from an earlier run to compare against")

    p = sub.add_parser("fmt-check", help="verify the piggyback codec against reference vectors")
    p.add_argument("--hex", action="append", default=[], help="also decode this hex message")
    return ap


def _load(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else default_config()
    return with_overrides(exp, seed=args.seed, loss=args.loss, fails=args.fail, out=args.out, check=args.check)


def _cmd_run(args) -> int:
    exp = _load(args)
    if args.mutation:
        exp = replace(exp, mutation=args.mutation)
    o = run_experiment(exp, trace_kinds=FULL if exp.out else ALWAYS)
    for line in o.report.lines():
        print(line)
    m = o.report.metrics
    print(f"injected={m['packets_injected']} released={m['packets_released']} "
          f"piggyback={m['mean_piggyback_bytes']}B recovery_ticks={m['recovery_ticks']} trace={o.trace.hash()}")
    if exp.out:
        write_outputs(exp.out, [o])
    return 0 if o.ok else 1


def _cmd_matrix(args) -> int:
    base = _load(args)
    seeds = range(base.seed, base.seed + args.seeds)
    if args.grid == "recovery":
        scenarios = recovery_grid(base, seeds=seeds)
    else:
        scenarios = commit_grid(base, seeds=seeds)
    outcomes = run_matrix(scenarios, jobs=args.jobs)
    for o in outcomes:
        print(f"{'PASS' if o.ok else 'FAIL'} {o.exp.scenario_id}" +
              ("" if o.ok else "  " + "; ".join(o.report.failures)))
    failed = sum(not o.ok for o in outcomes)
    print(f"{len(outcomes) - failed}/{len(outcomes)} scenarios passed")
    if base.out:
        write_outputs(base.out, outcomes, ndjson=False)
    return 0 if failed == 0 else 1


def _cmd_replay(args) -> int:
    exp = _load(args)
    traces = [simulate(exp, FULL) for _ in range(max(1, args.repeat))]
    hashes = {t.hash() for t in traces}
    ok = len(hashes) == 1
    print(f"{'PASS' if ok else 'FAIL'} {len(traces)} runs, {len(hashes)} distinct trace hash(es): {sorted(hashes)[0]}")
    if args.trace:
        same = Path(args.trace).read_text() == traces[0].to_ndjson()
        print(f"{'PASS' if same else 'FAIL'} matches {args.trace}")
        ok = ok and same
    if exp.out:
        Path(exp.out).mkdir(parents=True, exist_ok=True)
        (Path(exp.out) / "trace.ndjson").write_text(traces[0].to_ndjson())
    return 0 if ok else 1


def reference_vectors():
    """(name, message, expected hex or None) triples; hex worked out by hand."""
    one = PiggybackMessage.of([PCL(1, (0,), PiggybackLog(((b"a", b"\x01"),), (0,), (1,)))])
    yield "empty", PiggybackMessage(), "f7c0010000000000"
    yield "one-update", one, ("f7c0010000000001" "00010001" "0000000000000000" "0000000000000000"
                              "0000000000000001" "0001" "0161" "000101")
    for p in (1, 4, 16):
        upd = ((b"k" * 8, bytes(range(24))),)
        v1 = tuple(range(p))
        w = partition_of(upd[0][0], p)
        v2 = tuple(x + 1 if i == w else x for i, x in enumerate(v1))
        yield f"32B-update-P{p}", PiggybackMessage.of([PCL(2, v1, PiggybackLog(upd, v1, v2))]), None


def _cmd_fmt(args) -> int:
    ok = True
    for name, msg, want in reference_vectors():
        data = encode_piggyback(msg)
        good = decode_piggyback(data) == msg and len(data) == message_size(msg)
        if want is not None:
            good = good and data.hex() == want
        for pcl in msg.values():
            good = good and len(data) == 8 + pcl_size(len(pcl.commit), pcl.pl.updates)
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {name}: {len(data)} bytes {data.hex()[:48]}{'...' if len(data) > 24 else ''}")
    for bad, why in ((b"\x00\x00\x01\x00\x00\x00\x00\x00", "bad magic"), (bytes.fromhex("f7c0010000000001"), "truncated")):
        try:
            decode_piggyback(bad)
            print(f"FAIL reject {why}")
            ok = False
        except DecodeError:
            print(f"PASS reject {why}")
    for h in args.hex:
        try:
            msg = decode_piggyback(bytes.fromhex(h))
            print(f"decoded {len(msg)} PCL(s): {dict(msg)}")
        except (DecodeError, ValueError) as e:
            print(f"FAIL decode {h[:16]}...: {e}")
            ok = False
    return 0 if ok else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "run":
            return _cmd_run(args)
        if args.cmd == "matrix":
            return _cmd_matrix(args)
        if args.cmd == "replay":
            return _cmd_replay(args)
        return _cmd_fmt(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
