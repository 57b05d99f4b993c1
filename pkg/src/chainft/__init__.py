"""Fault-tolerant service function chains, simulated deterministically."""

from .core import ChainConfig
from .mbox import MiddleboxSpec
from .simnet import FaultPlan, Mutations, Simulator, Trace, Workload, check_invariants, run

__all__ = [
    "ChainConfig",
    "FaultPlan",
    "MiddleboxSpec",
    "Mutations",
    "Simulator",
    "Trace",
    "Workload",
    "check_invariants",
    "run",
]
__version__ = "0.1.0"
