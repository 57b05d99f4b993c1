import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainft.core.vclock import ConfigurationError, vc_concurrent, vc_join, vc_leq, vc_merge, vc_zero


def clocks(p):
    return st.tuples(*[st.integers(0, 50)] * p)


same3 = st.integers(1, 6).flatmap(lambda p: st.tuples(clocks(p), clocks(p), clocks(p)))


def test_examples():
    assert vc_merge((1, 2), (2, 1)) == (2, 2)
    assert vc_merge((0, 0), (3, 4)) == (3, 4)
    assert vc_merge((3, 4), (3, 4)) == (3, 4)
    assert vc_leq((1, 0), (1, 1))
    assert not vc_leq((2, 0), (1, 1))
    assert not vc_leq((1, 0), (0, 1)) and not vc_leq((0, 1), (1, 0))
    assert vc_concurrent((1, 0), (0, 1))


def test_length_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        vc_merge((1,), (1, 2))
    with pytest.raises(ConfigurationError):
        vc_leq((1,), (1, 2))


def test_join_of_many():
    assert vc_join([(1, 0, 0), (0, 2, 0), (0, 0, 3)]) == (1, 2, 3)


@given(same3)
def test_merge_is_a_semilattice(abc):
    a, b, c = abc
    assert vc_merge(a, b) == vc_merge(b, a)
    assert vc_merge(vc_merge(a, b), c) == vc_merge(a, vc_merge(b, c))
    assert vc_merge(a, a) == a
    assert vc_merge(vc_zero(len(a)), a) == a


@given(same3)
def test_leq_is_a_partial_order_matching_merge(abc):
    a, b, c = abc
    assert vc_leq(a, a)
    if vc_leq(a, b) and vc_leq(b, a):
        assert a == b
    if vc_leq(a, b) and vc_leq(b, c):
        assert vc_leq(a, c)
    assert vc_leq(a, b) == (vc_merge(a, b) == b)
    m = vc_merge(a, b)
    assert vc_leq(a, m) and vc_leq(b, m)
