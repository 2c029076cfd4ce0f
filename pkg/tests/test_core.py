import math

import pytest
from hypothesis import given, strategies as st

from sitan.core import (ConfigurationError, DuplicateInstanceError, Ed25519Authenticator,
                        FaultBudget, InstanceId, InstanceRegistry, KeyDirectory, ProtocolTag,
                        ResultCache, ResultCacheConflict, SimAuthenticator, max_faults, quorum,
                        quorum_properties)


def brute_quorum(n, f):
    # smallest k with k > (n+f)/2, by search
    k = 0
    while not 2 * k > n + f:
        k += 1
    return k


@pytest.mark.parametrize("n,f,q", [(4, 1, 3), (7, 2, 5), (10, 3, 7), (5, 1, 4), (100, 33, 67)])
def test_quorum_examples(n, f, q):
    assert quorum(n, f) == q


def test_quorum_rejects_too_many_faults():
    with pytest.raises(ConfigurationError):
        quorum(4, 2)
    with pytest.raises(ConfigurationError):
        FaultBudget(6, 2)


def test_quorum_exhaustive_against_search():
    for n in range(1, 101):
        for f in range(0, max_faults(n) + 1):
            assert quorum(n, f) == brute_quorum(n, f)
            assert all(quorum_properties(n, f).values()), (n, f)


def test_budget_bounds():
    b = FaultBudget.maximal(10)
    assert (b.f, b.k_min, b.k_max) == (3, 7, 7)
    assert FaultBudget(10, 1).k_max == 9


@given(st.integers(1, 400).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, max_faults(n)))))
def test_quorum_intersection_property(nf):
    n, f = nf
    q = quorum(n, f)
    # any two quorums overlap in at least f+1 nodes, so in a correct one
    assert 2 * q - n >= f + 1
    assert (n + f) / 2 < q <= n - f


def test_sim_signatures_bind_key_and_payload():
    kd = KeyDirectory(SimAuthenticator())
    a = kd.create(0, seed=1)
    kd.create(1, seed=1)
    sig = kd.auth.sign(a, b"hello")
    assert kd.verify(0, b"hello", sig)
    assert not kd.verify(0, b"hellO", sig)
    assert not kd.verify(1, b"hello", sig)
    assert not kd.verify(7, b"hello", sig)
    # keys are a pure function of (seed, node)
    assert SimAuthenticator().generate(0, 1).public_key == a.public_key
    assert SimAuthenticator().generate(0, 2).public_key != a.public_key


def test_ed25519_roundtrip():
    kd = KeyDirectory(Ed25519Authenticator())
    k = kd.create(3, seed=9)
    sig = kd.auth.sign(k, b"payload")
    assert len(sig) == 64
    assert kd.verify(3, b"payload", sig)
    assert not kd.verify(3, b"payloaD", sig)


def test_instance_ids_and_registry():
    vid = InstanceId("x", ProtocolTag.VEC)
    assert vid.child(ProtocolTag.MV, 2) == InstanceId("x", ProtocolTag.MV, 2)
    assert str(InstanceId("x", ProtocolTag.MV, 2)) == "x:MV/2"
    reg = InstanceRegistry()
    reg.register(vid)
    with pytest.raises(DuplicateInstanceError):
        reg.register(vid)
    reg.release(vid)
    reg.register(vid)


def test_result_cache_write_once():
    cache = ResultCache(horizon_ms=100)
    iid = InstanceId("a", ProtocolTag.BIN)
    assert cache.put(iid, 1, now=0)
    assert not cache.put(iid, 1, now=5)
    with pytest.raises(ResultCacheConflict):
        cache.put(iid, 0, now=6)
    assert cache.collect(now=50) == 0
    assert cache.collect(now=101) == 1
    assert iid not in cache
    assert math.isinf(ResultCache().horizon_ms)
