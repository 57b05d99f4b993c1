"""Experiment configuration: JSON files plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from ..core.config import ChainConfig
from ..mbox import MiddleboxSpec
from ..simnet import NAMES, FaultPlan, Target


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    flows: int = 16
    packets_per_flow: int = 64
    inter_arrival: int = 20
    payload_size: int = 0
    idle_every: int = 0  # insert an idle gap after this many packets (0: never)
    idle_gap: int = 0

    def __post_init__(self):
        if self.flows < 0 or self.packets_per_flow < 0:
            raise ConfigError("flows and packets_per_flow must be >= 0")
        if self.inter_arrival < 1:
            raise ConfigError("inter_arrival must be >= 1")
        if self.idle_every < 0 or self.idle_gap < 0:
            raise ConfigError("idle gap settings must be >= 0")

    @property
    def packets(self) -> int:
        return self.flows * self.packets_per_flow


@dataclass(frozen=True)
class ExperimentConfig:
    chain: ChainConfig
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    faults: FaultPlan = field(default_factory=FaultPlan)
    check: str = "all"
    out: Optional[str] = None
    scenario_id: str = "run"
    mutation: Optional[str] = None

    def __post_init__(self):
        if self.check not in ("all", "fast"):
            raise ConfigError("check must be 'all' or 'fast'")
        if self.mutation is not None and self.mutation not in NAMES:
            raise ConfigError(f"unknown mutation {self.mutation!r}")

    @property
    def seed(self) -> int:
        return self.chain.seed


def parse_fail(text: str) -> Tuple[int, Target]:
    """``POSITION@TICK`` where POSITION is a replica position, ``fwd`` or ``buf``."""
    try:
        where, tick = text.split("@")
        t = int(tick)
    except ValueError:
        raise ConfigError(f"bad failure spec {text!r}; expected POSITION@TICK") from None
    where = where.strip()
    if where in ("fwd", "buf"):
        return t, where
    if where.startswith("r"):
        where = where[1:]
    if not where.isdigit() or int(where) < 1:
        raise ConfigError(f"bad failure position {where!r}")
    return t, int(where)


_CHAIN_KEYS = {"middleboxes", "f", "mode", "latency", "timer_period", "queue_capacity",
               "nack_timeout", "detect_delay", "init_delay", "op_ticks"}
_TOP_KEYS = {"chain", "workload", "faults", "check", "seed", "scenario_id", "mutation", "out"}


def _reject_unknown(d: Dict[str, Any], allowed: Iterable[str], where: str) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown {where} key(s): {', '.join(sorted(extra))}")


def chain_from_dict(d: Dict[str, Any], seed: int = 0) -> ChainConfig:
    _reject_unknown(d, _CHAIN_KEYS, "chain")
    mbs = d.get("middleboxes")
    if not mbs:
        raise ConfigError("chain.middleboxes must be a non-empty list")
    try:
        specs = tuple(MiddleboxSpec(kind=m) if isinstance(m, str) else MiddleboxSpec.from_dict(m) for m in mbs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad middlebox: {e}") from None
    kw = {k: d[k] for k in ("f", "mode", "timer_period", "queue_capacity", "nack_timeout",
                            "detect_delay", "init_delay", "op_ticks") if k in d}
    if "latency" in d:
        lo, hi = d["latency"]
        kw["latency_min"], kw["latency_max"] = int(lo), int(hi)
    try:
        return ChainConfig(specs, seed=seed, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def config_from_dict(d: Dict[str, Any]) -> ExperimentConfig:
    _reject_unknown(d, _TOP_KEYS, "top-level")
    seed = int(d.get("seed", 0))
    if "chain" not in d:
        raise ConfigError("missing 'chain' section")
    chain = chain_from_dict(d["chain"], seed)
    wd = d.get("workload", {})
    try:
        workload = WorkloadSpec(**wd)
    except TypeError as e:
        raise ConfigError(f"bad workload: {e}") from None
    fd = dict(d.get("faults", {}))
    _reject_unknown(fd, {"loss", "dup", "crashes"}, "faults")
    crashes = tuple(parse_fail(c) if isinstance(c, str) else (int(c[1]), c[0]) for c in fd.get("crashes", ()))
    try:
        faults = FaultPlan(tuple(sorted(crashes, key=lambda c: c[0])), float(fd.get("loss", 0.0)),
                           float(fd.get("dup", 0.0)))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return ExperimentConfig(chain, workload, faults, d.get("check", "all"), d.get("out"),
                            d.get("scenario_id", "run"), d.get("mutation"))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def with_overrides(exp: ExperimentConfig, seed: Optional[int] = None, loss: Optional[float] = None,
                   fails: Iterable[str] = (), out: Optional[str] = None,
                   check: Optional[str] = None) -> ExperimentConfig:
    chain = exp.chain if seed is None else replace(exp.chain, seed=seed)
    faults = exp.faults
    extra = tuple(parse_fail(f) for f in fails)
    if extra or loss is not None:
        crashes = tuple(sorted(faults.crashes + extra, key=lambda c: c[0]))
        faults = FaultPlan(crashes, faults.loss if loss is None else loss, faults.dup)
    return replace(exp, chain=chain, faults=faults,
                   out=exp.out if out is None else out,
                   check=exp.check if check is None else check)


CH_REC = ("firewall", "monitor", "simplenat")


def default_config() -> ExperimentConfig:
    """Firewall -> Monitor -> SimpleNAT, f=1."""
    specs = (
        MiddleboxSpec("firewall", partitions=1, block_rules=()),
        MiddleboxSpec("monitor"),
        MiddleboxSpec("simplenat", partitions=2),
    )
    return ExperimentConfig(ChainConfig(specs, f=1))
