"""Workload middleboxes: Monitor, SimpleNAT, Gen and Firewall.

Each middlebox is written as a generator that yields state operations::

    value = yield (READ, key)
    yield (WRITE, key, value)

and returns a :class:`Forward` or :data:`DROP`. The Head's scheduler steps
these generators one operation at a time so concurrent packet transactions
interleave; :func:`process` drives one to completion against any object with
``read``/``write`` methods.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Generator, Optional, Protocol, Tuple, Union

READ = "r"
WRITE = "w"

KINDS = ("monitor", "simplenat", "gen", "firewall")

_U64 = struct.Struct(">Q")
_U16 = struct.Struct(">H")


@dataclass(frozen=True)
class Forward:
    payload: bytes = b""


@dataclass(frozen=True)
class Drop:
    pass


DROP = Drop()
MbAction = Union[Forward, Drop]


@dataclass(frozen=True)
class BlockRule:
    """Matches a flow id exactly, or by ``flow_id % mod == rem``."""

    flow: Optional[int] = None
    mod: Optional[int] = None
    rem: int = 0

    def matches(self, flow_id: int) -> bool:
        if self.flow is not None:
            return flow_id == self.flow
        if self.mod:
            return flow_id % self.mod == self.rem
        return False


@dataclass(frozen=True)
class MiddleboxSpec:
    kind: str
    partitions: int = 4
    threads: int = 8
    sharing_level: int = 1
    state_size: int = 32
    pool_size: int = 64
    block_rules: Tuple[BlockRule, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown middlebox kind {self.kind!r}")
        if self.partitions < 1 or self.threads < 1:
            raise ValueError("partitions and threads must be >= 1")
        if not 1 <= self.sharing_level <= self.threads:
            raise ValueError("sharing_level must be in 1..threads")
        if not 0 <= self.state_size <= 65535:
            raise ValueError("state_size out of range")
        if not 0 <= self.pool_size <= 32767:
            raise ValueError("pool_size out of range")

    @property
    def shared_groups(self) -> int:
        return math.ceil(self.threads / self.sharing_level)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MiddleboxSpec":
        d = dict(d)
        rules = d.pop("block_rules", ())
        d["block_rules"] = tuple(r if isinstance(r, BlockRule) else BlockRule(**r) for r in rules)
        return cls(**d)


# -- value encodings ----------------------------------------------------------

def u64(n: int) -> bytes:
    return _U64.pack(n)


def read_u64(b: Optional[bytes]) -> int:
    return 0 if b is None else _U64.unpack(b)[0]


def encode_pool(free) -> bytes:
    return b"".join(_U16.pack(i) for i in free)


def decode_pool(b: bytes) -> list:
    return [x for (x,) in _U16.iter_unpack(b)]


def gen_bytes(packet_id: int, size: int) -> bytes:
    """Deterministic per-packet filler; no RNG involved."""
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.blake2b(_U64.pack(packet_id) + _U64.pack(counter)).digest()
        counter += 1
    return out[:size]


def flow_key(flow_id: int) -> bytes:
    return b"flow:%d" % flow_id


def shared_key(group: int) -> bytes:
    return b"shared:%d" % group


def nat_key(flow_id: int) -> bytes:
    return b"nat:%d" % flow_id


POOL_KEY = b"pool:free"


# -- programs -----------------------------------------------------------------

Program = Generator[Tuple, Any, MbAction]


def _monitor(spec: MiddleboxSpec, flow_id: int, payload: bytes) -> Program:
    fk = flow_key(flow_id)
    n = yield (READ, fk)
    yield (WRITE, fk, u64(read_u64(n) + 1))
    sk = shared_key(flow_id % spec.shared_groups)
    n = yield (READ, sk)
    yield (WRITE, sk, u64(read_u64(n) + 1))
    return Forward(payload)


def _simplenat(spec: MiddleboxSpec, flow_id: int, payload: bytes) -> Program:
    nk = nat_key(flow_id)
    mapping = yield (READ, nk)
    if mapping is not None:
        return Forward(payload)
    raw = yield (READ, POOL_KEY)
    free = list(range(spec.pool_size)) if raw is None else decode_pool(raw)
    if not free:
        return DROP
    idx = free.pop(0)
    yield (WRITE, POOL_KEY, encode_pool(free))
    yield (WRITE, nk, _U16.pack(idx))
    return Forward(payload)


def _gen(spec: MiddleboxSpec, flow_id: int, payload: bytes, packet_id: int) -> Program:
    yield (WRITE, b"gen:%d" % (flow_id % 16), gen_bytes(packet_id, spec.state_size))
    return Forward(payload)


def _firewall(spec: MiddleboxSpec, flow_id: int, payload: bytes) -> Program:
    for rule in spec.block_rules:
        if rule.matches(flow_id):
            return DROP
    return Forward(payload)
    yield  # pragma: no cover - makes this a generator


def program(spec: MiddleboxSpec, flow_id: int, packet_id: int, payload: bytes = b"") -> Program:
    kind = spec.kind
    if kind == "monitor":
        return _monitor(spec, flow_id, payload)
    if kind == "simplenat":
        return _simplenat(spec, flow_id, payload)
    if kind == "gen":
        return _gen(spec, flow_id, payload, packet_id)
    return _firewall(spec, flow_id, payload)


class StateSession(Protocol):
    def read(self, key: bytes) -> Optional[bytes]: ...

    def write(self, key: bytes, value: bytes) -> None: ...


def run_program(prog: Program, session: StateSession) -> MbAction:
    try:
        op = next(prog)
        while True:
            if op[0] == READ:
                op = prog.send(session.read(op[1]))
            else:
                session.write(op[1], op[2])
                op = prog.send(None)
    except StopIteration as stop:
        return stop.value


def process(spec: MiddleboxSpec, packet, session: StateSession) -> MbAction:
    """Run one packet through the middlebox against ``session``."""
    return run_program(program(spec, packet.flow_id, packet.packet_id, packet.payload), session)


class DictSession:
    """Serial, lock-free session over a plain dict (used by the oracle)."""

    def __init__(self, data: Optional[Dict[bytes, bytes]] = None):
        self.data = {} if data is None else data
        self.writes: Dict[bytes, bytes] = {}

    def read(self, key):
        return self.data.get(key)

    def write(self, key, value):
        self.data[key] = value
        self.writes[key] = value


class EngineSession:
    """Binds a transaction context to a TxnEngine for synchronous use."""

    def __init__(self, engine, ctx):
        self.engine = engine
        self.ctx = ctx

    def read(self, key):
        return self.engine.read(self.ctx, key)

    def write(self, key, value):
        self.engine.write(self.ctx, key, value)
