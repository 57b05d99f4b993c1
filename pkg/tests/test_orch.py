from chainft.core.config import ChainConfig
from chainft.mbox import MiddleboxSpec
from chainft.simnet import Simulator


def chain(n, f):
    return ChainConfig(tuple(MiddleboxSpec("monitor") for _ in range(n)), f=f)


def test_ring_groups():
    cfg = chain(3, 1)
    assert cfg.group(1) == [1, 2]
    assert cfg.group(3) == [3, 1]
    assert cfg.memberships(1) == {1: 0, 3: 1}


def test_replication_only_positions():
    cfg = chain(1, 2)
    assert cfg.n_eff == 3 and cfg.group(1) == [1, 2, 3]
    sim = Simulator(cfg)
    assert len(sim.dep.positions) == 3
    r2 = sim.nodes[sim.dep.positions[2]]
    assert r2.head is None and set(r2.groups) == {1}


def test_f0_singletons():
    cfg = chain(5, 0)
    assert all(cfg.group(m) == [m] for m in range(1, 6))


def test_route_and_next_hop():
    sim = Simulator(chain(3, 1))
    dep = sim.dep
    route = dep.route()
    assert route[0] == dep.forwarder and route[-1] == dep.buffer
    assert dep.next_hop(0) == dep.positions[1] and dep.next_hop(3) == dep.buffer


def test_donor_order():
    sim = Simulator(chain(3, 2))
    orch = sim.orch
    p = sim.dep.positions
    # Head recovery fetches from its first successor
    assert orch.donors(1, 1) == [p[2], p[3]]
    # other members fetch from the nearest predecessor first
    assert orch.donors(1, 3) == [p[2], p[1]]
    sim.nodes[p[2]].alive = False
    assert orch.donors(1, 3) == [p[1]]
