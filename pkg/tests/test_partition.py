import random

from hypothesis import given
from hypothesis import strategies as st

from chainft.core.partition import fnv1a_64, partition_of


def reference_fnv1a_64(data: bytes) -> int:
    # straight from the published algorithm, kept separate from the library code
    h = 14695981039346656037
    for byte in data:
        h ^= byte
        h = (h * 1099511628211) % 2 ** 64
    return h


def test_published_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_flow_42_against_reference():
    assert partition_of(b"flow:42", 4) == reference_fnv1a_64(b"flow:42") % 4


def test_single_partition_is_zero():
    assert partition_of(b"anything", 1) == 0


@given(st.binary(min_size=1, max_size=64), st.integers(1, 64))
def test_matches_reference(key, p):
    assert partition_of(key, p) == reference_fnv1a_64(key) % p


def test_deterministic_over_many_keys():
    rng = random.Random(7)
    keys = [rng.randbytes(rng.randint(1, 40)) for _ in range(10_000)]
    a = [partition_of(k, 16) for k in keys]
    partition_of.cache_clear()
    assert a == [reference_fnv1a_64(k) % 16 for k in keys]
