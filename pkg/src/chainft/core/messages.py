"""Piggyback payloads carried on packets, and their wire codec.

Wire layout (big-endian)::

    magic u16 = 0xF7C0 | version u8 = 1 | reserved 3B | pcl_count u16
    per PCL:    middlebox_id u16 | P u16 | commit P*u64 | v1 P*u64 | v2 P*u64
                update_count u16
    per update: key_len u8 | key | value_len u16 | value

Only the piggyback region is bit-exact; packets themselves are records.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

from .logstore import MAX_KEY_LEN, MAX_VALUE_LEN
from .partition import partition_of
from .vclock import VectorClock

MAGIC = 0xF7C0
VERSION = 1
HEADER = struct.Struct(">HB3xH")
PCL_HEAD = struct.Struct(">HH")
U16 = struct.Struct(">H")
U8 = struct.Struct(">B")

HEADER_SIZE = HEADER.size
# middlebox_id + P + update_count
PCL_FIXED = PCL_HEAD.size + U16.size
# key_len + value_len
UPDATE_FIXED = U8.size + U16.size


class DecodeError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class PiggybackLog:
    updates: Tuple[Tuple[bytes, bytes], ...]
    v1: VectorClock
    v2: VectorClock

    @property
    def empty(self) -> bool:
        return not self.updates

    def check(self) -> None:
        """Validate the range/updates relationship; raises ValueError."""
        if len(self.v1) != len(self.v2):
            raise ValueError("v1/v2 length mismatch")
        p = len(self.v1)
        written = {partition_of(k, p) for k, _ in self.updates}
        for i, (a, b) in enumerate(zip(self.v1, self.v2)):
            want = a + 1 if i in written else a
            if b != want:
                raise ValueError(f"partition {i}: v2={b}, expected {want}")
        if not self.updates and self.v1 != self.v2:
            raise ValueError("empty update list needs v1 == v2")


def empty_pl(clock: VectorClock) -> PiggybackLog:
    return PiggybackLog((), clock, clock)


@dataclass(frozen=True, slots=True)
class PCL:
    """Per-middlebox commit vector plus piggyback log.

    ``epoch`` is simulator metadata naming the Head generation that produced
    ``pl``; it never goes on the wire and is ignored by equality.
    """

    middlebox: int
    commit: VectorClock
    pl: PiggybackLog
    epoch: int = field(default=0, compare=False)

    @property
    def partitions(self) -> int:
        return len(self.commit)


class PiggybackMessage(Dict[int, PCL]):
    """Mapping ``middlebox id -> PCL``; at most one PCL per middlebox by construction."""

    @classmethod
    def of(cls, pcls: Iterable[PCL]) -> "PiggybackMessage":
        msg = cls()
        for pcl in pcls:
            if pcl.middlebox in msg:
                raise ValueError(f"duplicate middlebox id {pcl.middlebox}")
            msg[pcl.middlebox] = pcl
        return msg


class PacketKind(Enum):
    DATA = "data"
    PROPAGATING = "propagating"


@dataclass(slots=True)
class Packet:
    packet_id: int
    flow_id: int
    payload: bytes = b""
    piggyback: Optional[PiggybackMessage] = None
    kind: PacketKind = PacketKind.DATA
    injected_at: int = 0

    @property
    def is_data(self) -> bool:
        return self.kind is PacketKind.DATA

    def clone(self) -> "Packet":
        pb = None if self.piggyback is None else PiggybackMessage(self.piggyback)
        return Packet(self.packet_id, self.flow_id, self.payload, pb, self.kind, self.injected_at)


# -- sizes -------------------------------------------------------------------

def pcl_size(partitions: int, updates: Iterable[Tuple[bytes, bytes]]) -> int:
    """Encoded bytes of one PCL: fixed fields, three vectors, then updates."""
    return (
        PCL_FIXED
        + 3 * partitions * 8
        + sum(UPDATE_FIXED + len(k) + len(v) for k, v in updates)
    )


def message_size(msg: PiggybackMessage) -> int:
    return HEADER_SIZE + sum(pcl_size(len(p.commit), p.pl.updates) for p in msg.values())


# -- codec -------------------------------------------------------------------

def _vec(p: int) -> struct.Struct:
    return struct.Struct(f">{p}Q")


def encode_piggyback(msg: PiggybackMessage) -> bytes:
    if len(msg) > 0xFFFF:
        raise ValueError("too many PCLs")
    out = [HEADER.pack(MAGIC, VERSION, len(msg))]
    for mid, pcl in msg.items():
        if mid != pcl.middlebox:
            raise ValueError("message key does not match PCL middlebox id")
        p = len(pcl.commit)
        if len(pcl.pl.v1) != p or len(pcl.pl.v2) != p:
            raise ValueError(f"middlebox {mid}: vector lengths disagree")
        if len(pcl.pl.updates) > 0xFFFF:
            raise ValueError("too many updates in one PCL")
        vec = _vec(p)
        out.append(PCL_HEAD.pack(mid, p))
        out.append(vec.pack(*pcl.commit))
        out.append(vec.pack(*pcl.pl.v1))
        out.append(vec.pack(*pcl.pl.v2))
        out.append(U16.pack(len(pcl.pl.updates)))
        for key, value in pcl.pl.updates:
            if not 1 <= len(key) <= MAX_KEY_LEN:
                raise ValueError("key length out of range")
            if len(value) > MAX_VALUE_LEN:
                raise ValueError("value too long")
            out.append(U8.pack(len(key)))
            out.append(key)
            out.append(U16.pack(len(value)))
            out.append(value)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("truncated piggyback message")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def decode_piggyback(data: bytes) -> PiggybackMessage:
    r = _Reader(data)
    magic, version, count = r.unpack(HEADER)
    if magic != MAGIC:
        raise DecodeError(f"bad magic 0x{magic:04x}")
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    msg = PiggybackMessage()
    for _ in range(count):
        mid, p = r.unpack(PCL_HEAD)
        if p < 1:
            raise DecodeError("partition count must be >= 1")
        vec = _vec(p)
        commit = r.unpack(vec)
        v1 = r.unpack(vec)
        v2 = r.unpack(vec)
        (n,) = r.unpack(U16)
        updates = []
        for _ in range(n):
            (klen,) = r.unpack(U8)
            if klen == 0:
                raise DecodeError("empty key")
            key = bytes(r.take(klen))
            (vlen,) = r.unpack(U16)
            updates.append((key, bytes(r.take(vlen))))
        if mid in msg:
            raise DecodeError(f"duplicate middlebox id {mid}")
        msg[mid] = PCL(mid, commit, PiggybackLog(tuple(updates), v1, v2))
    if r.pos != len(r.data):
        raise DecodeError("trailing bytes after piggyback message")
    return msg
