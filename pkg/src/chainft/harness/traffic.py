"""Deterministic traffic schedules."""

from __future__ import annotations

import random

from ..simnet import Workload
from .config import WorkloadSpec


def generate_traffic(spec: WorkloadSpec, seed: int) -> Workload:
    """Interleave ``flows x packets_per_flow`` packets in a seeded random order.

    Gaps between injections are uniform on ``[1, 2*inter_arrival - 1]``, so
    their mean is ``inter_arrival``.
    """
    rng = random.Random(f"{seed}:traffic")
    flows = [f for f in range(spec.flows) for _ in range(spec.packets_per_flow)]
    rng.shuffle(flows)
    hi = max(1, 2 * spec.inter_arrival - 1)
    t = 0
    out = []
    for i, flow in enumerate(flows):
        t += rng.randint(1, hi)
        if spec.idle_every and i and i % spec.idle_every == 0:
            t += spec.idle_gap
        out.append((t, flow))
    return Workload(tuple(out), bytes(spec.payload_size))
