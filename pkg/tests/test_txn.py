import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainft.core.partition import partition_of
from chainft.core.vclock import vc_concurrent, vc_leq
from chainft.txn import LockWait, OrderMatrix, TxnEngine, Wounded


def key_in(p, partitions):
    i = 0
    while True:
        k = b"key:%d" % i
        if partition_of(k, partitions) == p:
            return k
        i += 1


def test_begin_ids_and_timestamps():
    e = TxnEngine(2)
    a, b = e.begin(1), e.begin(2)
    assert a.txn_id != b.txn_id
    assert a.timestamp < b.timestamp


def test_restart_keeps_timestamp():
    e = TxnEngine(2)
    ctx = e.begin(1)
    e.abort(ctx)
    again = e.restart(ctx)
    assert again.timestamp == ctx.timestamp
    assert again.txn_id != ctx.txn_id


def test_read_absent_marks_involved():
    e = TxnEngine(4)
    ctx = e.begin(1)
    k = key_in(2, 4)
    assert e.read(ctx, k) is None
    assert ctx.involved == {2}


def test_read_your_writes_and_last_write_wins():
    e = TxnEngine(1)
    ctx = e.begin(1)
    e.write(ctx, b"k", b"1")
    e.write(ctx, b"k", b"2")
    assert e.read(ctx, b"k") == b"2"
    e.commit(ctx)
    assert e.store.data[b"k"] == b"2"


def test_abort_leaves_store_untouched():
    e = TxnEngine(1)
    ctx = e.begin(1)
    e.write(ctx, b"k", b"1")
    e.abort(ctx)
    assert b"k" not in e.store.data
    with pytest.raises(Wounded):
        e.commit(ctx)


def test_wound_wait():
    e = TxnEngine(1)
    old, young = e.begin(1), e.begin(2)
    e.read(young, b"k")
    with pytest.raises(LockWait):
        # a younger requester waits
        e.read(e.begin(3), b"k")
    e.read(old, b"k")
    assert young.aborted
    assert e.store.locks[0] is old


def test_commit_rule_examples():
    e = TxnEngine(2)
    k0, k1 = key_in(0, 2), key_in(1, 2)
    ctx = e.begin(1)
    e.read(ctx, k0)
    e.write(ctx, k1, b"x")
    pl = e.commit(ctx)
    assert (pl.v1, pl.v2) == ((0, 0), (0, 1))
    assert e.matrix.rows == [[0, 1], [0, 1]]
    ctx = e.begin(2)
    e.write(ctx, k0, b"y")
    pl = e.commit(ctx)
    assert (pl.v1, pl.v2) == ((0, 1), (1, 1))


def test_disjoint_commits_are_concurrent():
    e = TxnEngine(2)
    a, b = e.begin(1), e.begin(2)
    e.write(a, key_in(0, 2), b"a")
    e.write(b, key_in(1, 2), b"b")
    assert vc_concurrent(e.commit(a).v2, e.commit(b).v2)


def test_scalar_mode():
    e = TxnEngine(1, mode="scalar")
    ctx = e.begin(1)
    e.read(ctx, b"k")
    pl = e.commit(ctx)
    assert (pl.updates, pl.v1, pl.v2) == ((), (0,), (0,))
    for i in range(100):
        ctx = e.begin(i + 2)
        e.write(ctx, b"k", b"%d" % i)
        pl = e.commit(ctx)
    assert pl.v2 == (100,) and e.max_clock() == (100,)


def test_recover_rebuilds_latest_values():
    e = TxnEngine(2)
    for i in range(5):
        ctx = e.begin(i)
        e.write(ctx, b"k", b"%d" % i)
        e.commit(ctx)
    fresh = TxnEngine(2)
    fresh.recover(e.log.copy(), e.max_clock())
    assert fresh.store.data == e.store.data
    assert fresh.max_clock() == e.max_clock()


def _matrix_case(rng: random.Random):
    P = rng.randint(1, 6)
    m = OrderMatrix(P)
    wrote = [0] * P
    for _ in range(rng.randint(1, 12)):
        involved = set(rng.sample(range(P), rng.randint(1, P)))
        written = {p for p in involved if rng.random() < 0.5}
        before = [list(r) for r in m.rows]
        v1, v2 = m.commit(involved, written)
        for p in written:
            wrote[p] += 1
        assert vc_leq(v1, v2)
        assert sum(v2) - sum(v1) == len(written)
        if written:
            assert all(m.rows[i] == list(v2) for i in involved)
        else:
            assert m.rows == before
        for i in set(range(P)) - involved:
            assert m.rows[i] == before[i]
        assert list(m.diagonal()) == wrote


def test_matrix_laws_randomized():
    rng = random.Random(11)
    for _ in range(2000):
        _matrix_case(rng)


@settings(max_examples=200)
@given(st.integers(0, 2 ** 32))
def test_matrix_laws_hypothesis(seed):
    _matrix_case(random.Random(seed))
