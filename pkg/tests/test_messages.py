import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainft.core import (PCL, DecodeError, PiggybackLog, PiggybackMessage, decode_piggyback, empty_pl,
                          encode_piggyback, message_size, pcl_size)
from chainft.core.partition import partition_of


def test_empty_message_is_bare_header():
    data = encode_piggyback(PiggybackMessage())
    assert data == bytes.fromhex("f7c0010000000000")
    assert decode_piggyback(data) == PiggybackMessage()


def test_one_update_hand_encoding():
    msg = PiggybackMessage.of([PCL(1, (0,), PiggybackLog(((b"a", b"\x01"),), (0,), (1,)))])
    want = (b"\xf7\xc0\x01\x00\x00\x00\x00\x01"  # magic, version, reserved, count
            + b"\x00\x01\x00\x01"  # middlebox 1, P=1
            + bytes(8) + bytes(8) + b"\x00" * 7 + b"\x01"  # commit, v1, v2
            + b"\x00\x01"  # one update
            + b"\x01a" + b"\x00\x01\x01")
    assert encode_piggyback(msg) == want


def test_round_trip_32_byte_update():
    key = b"gen:3"
    val = bytes(range(32))
    p = partition_of(key, 4)
    v2 = tuple(1 if i == p else 0 for i in range(4))
    msg = PiggybackMessage.of([PCL(2, (0, 0, 0, 0), PiggybackLog(((key, val),), (0, 0, 0, 0), v2))])
    assert decode_piggyback(encode_piggyback(msg)) == msg


def test_bad_magic_rejected():
    data = bytearray(encode_piggyback(PiggybackMessage()))
    data[0] ^= 0xFF
    with pytest.raises(DecodeError):
        decode_piggyback(bytes(data))


def test_truncation_rejected():
    msg = PiggybackMessage.of([PCL(1, (0,), empty_pl((0,)))])
    data = encode_piggyback(msg)
    for cut in range(len(data)):
        with pytest.raises(DecodeError):
            decode_piggyback(data[:cut])


def test_duplicate_middlebox_rejected():
    one = encode_piggyback(PiggybackMessage.of([PCL(1, (0,), empty_pl((0,)))]))
    body = one[8:]
    dup = struct.pack(">HB3xH", 0xF7C0, 1, 2) + body + body
    with pytest.raises(DecodeError):
        decode_piggyback(dup)
    with pytest.raises(ValueError):
        PiggybackMessage.of([PCL(1, (0,), empty_pl((0,))), PCL(1, (0,), empty_pl((0,)))])


def test_pl_check():
    PiggybackLog(((b"k", b"v"),), (0,), (1,)).check()
    with pytest.raises(ValueError):
        PiggybackLog(((b"k", b"v"),), (0,), (0,)).check()


pcls = st.builds(
    lambda mid, p, upd, base: PCL(mid, tuple(base[:p]), PiggybackLog(tuple(upd), tuple(base[:p]), tuple(base[:p]))),
    st.integers(0, 0xFFFF), st.integers(1, 8),
    st.lists(st.tuples(st.binary(min_size=1, max_size=20), st.binary(max_size=40)), max_size=4),
    st.lists(st.integers(0, 2 ** 64 - 1), min_size=8, max_size=8),
)


@given(st.lists(pcls, max_size=5, unique_by=lambda p: p.middlebox))
def test_round_trip_and_size(items):
    msg = PiggybackMessage.of(items)
    data = encode_piggyback(msg)
    assert decode_piggyback(data) == msg
    assert len(data) == message_size(msg) == 8 + sum(pcl_size(p.partitions, p.pl.updates) for p in items)
