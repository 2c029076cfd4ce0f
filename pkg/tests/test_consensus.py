from collections import Counter
from itertools import combinations_with_replacement, product

import pytest
from hypothesis import given, strategies as st

from sitan.consensus import (NotInSink, Phase, SinkUnavailable, check_bin_phase, check_mv,
                             converge_step, decide_step, decode_row, lock_step, make_bin_phase,
                             make_mv_message)
from sitan.consensus.messages import Decision, decision_bytes, encode_value
from sitan.core import DuplicateInstanceError, InstanceId, KeyDirectory, ProtocolTag, SimAuthenticator
from sitan.node import Network, NodeConfig

BOT = None


# ---------------------------------------------------------------- transition tables

def oracle_decide(values, n, f):
    """Independent reading of the DECIDE step: quorum of a bit decides it;
    otherwise any non-⊥ bit (at most one can be justified) is carried forward;
    otherwise the coin."""
    q = (n + f) // 2 + 1
    bits = [v for v in values if v is not BOT]
    for b in (0, 1):
        if bits.count(b) >= q:
            return ("decide", b)
    if bits:
        assert len(set(bits)) == 1
        return ("adopt", bits[0])
    return ("coin", None)


@pytest.mark.parametrize("size", [3, 4])
def test_decide_table_n4_f1(size):
    # every DECIDE multiset a node can collect with n=4, f=1 (quorum 3)
    seen = 0
    for combo in combinations_with_replacement((0, 1, BOT), size):
        if 0 in combo and 1 in combo:
            continue    # cannot be justified: two LOCK quorums would intersect in a correct node
        assert decide_step(combo, 3) == oracle_decide(combo, 4, 1), combo
        seen += 1
    assert seen == (7 if size == 3 else 9)


def test_decide_examples():
    assert decide_step([BOT, BOT, 1], 3) == ("adopt", 1)
    assert decide_step([BOT, BOT, BOT], 3) == ("coin", None)
    assert decide_step([1, 1, 1], 3) == ("decide", 1)


def test_lock_and_converge_examples():
    assert lock_step([1, 1, 1], 3) == 1
    assert lock_step([1, 0, 0], 3) is None
    assert converge_step([0, 0, 1], 1) == 0
    assert converge_step([0, 1], 1) == 1 and converge_step([0, 1], 0) == 0


@given(st.lists(st.sampled_from([0, 1]), min_size=1, max_size=40), st.sampled_from([0, 1]))
def test_converge_picks_a_majority(values, own):
    v = converge_step(values, own)
    c = Counter(values)
    assert c[v] >= c[1 - v]


# ---------------------------------------------------------------- message validation

@pytest.fixture
def keys():
    kd = KeyDirectory(SimAuthenticator())
    return kd, [kd.create(i, seed=0) for i in range(4)]


PARTS = frozenset(range(4))
BIN_IID = InstanceId("t", ProtocolTag.BIN)
MID = InstanceId("t", ProtocolTag.MV)


def test_bin_lock_needs_the_converge_majority(keys):
    kd, ks = keys
    conv = [make_bin_phase(kd.auth, ks[i], BIN_IID, 1, Phase.CONVERGE, v, ())
            for i, v in enumerate((1, 1, 0))]
    ok = make_bin_phase(kd.auth, ks[3], BIN_IID, 1, Phase.LOCK, 1, conv)
    bad = make_bin_phase(kd.auth, ks[3], BIN_IID, 1, Phase.LOCK, 0, conv)
    short = make_bin_phase(kd.auth, ks[3], BIN_IID, 1, Phase.LOCK, 1, conv[:2])
    assert check_bin_phase(ok, kd, PARTS, 1) is None
    assert check_bin_phase(bad, kd, PARTS, 1) == "LOCK value is not the CONVERGE majority"
    assert check_bin_phase(short, kd, PARTS, 1) == "justification below quorum"


def test_bin_decide_needs_a_lock_quorum(keys):
    kd, ks = keys
    locks = [make_bin_phase(kd.auth, ks[i], BIN_IID, 1, Phase.LOCK, v,
                            [make_bin_phase(kd.auth, ks[j], BIN_IID, 1, Phase.CONVERGE, 1, ())
                             for j in range(3)])
             for i, v in enumerate((1, 1, 1))]
    assert check_bin_phase(make_bin_phase(kd.auth, ks[3], BIN_IID, 1, Phase.DECIDE, 1, locks),
                           kd, PARTS, 1) is None
    assert check_bin_phase(make_bin_phase(kd.auth, ks[3], BIN_IID, 1, Phase.DECIDE, BOT, locks),
                           kd, PARTS, 1) == "⊥ despite a quorum for one value"


def mv(kd, ks, i, phase, value, just=()):
    return make_mv_message(kd.auth, ks[i], MID, phase, value, just)


def test_mv_phase2_short_quorum_is_invalid(keys):
    kd, ks = keys
    p1 = [mv(kd, ks, i, 1, b"Y", [mv(kd, ks, i, 0, b"Y")]) for i in range(2)]
    assert check_mv(mv(kd, ks, 3, 2, b"Y", p1), kd, PARTS, 1) == "justification below quorum"


def test_mv_phase1_adoption_with_f_plus_one_support(keys):
    kd, ks = keys
    p0 = [mv(kd, ks, 0, 0, b"maj"), mv(kd, ks, 1, 0, b"maj"), mv(kd, ks, 2, 0, b"other")]
    assert check_mv(mv(kd, ks, 3, 1, b"maj", p0), kd, PARTS, 1) is None
    assert check_mv(mv(kd, ks, 3, 1, b"other", p0), kd, PARTS, 1) == "adopted value lacks f+1 support"


def mv_phase1_oracle(value, just, sender, n, f):
    """Rule table for a phase-1 message, written independently of the validator."""
    if len(just) == 1 and just[0][0] == sender:
        return just[0][1] == value
    if 2 * len(just) <= n + f:
        return False
    return sum(1 for _, v in just if v == value) > f


def test_mv_phase1_rule_table_n4_f1(keys):
    kd, ks = keys
    sender = 3
    values = (b"a", b"b")
    checked = 0
    for size in range(0, 5):
        for members in combinations_with_replacement(range(4), size):
            if len(set(members)) != size:
                continue
            for vals in product(values, repeat=size):
                for claim in values:
                    just = [mv(kd, ks, m, 0, v) for m, v in zip(members, vals)]
                    msg = mv(kd, ks, sender, 1, claim, just)
                    want = mv_phase1_oracle(claim, list(zip(members, vals)), sender, 4, 1)
                    assert (check_mv(msg, kd, PARTS, 1) is None) == want, (members, vals, claim)
                    checked += 1
    assert checked > 100


def test_mv_phase1_differing_from_own_proposal(keys):
    kd, ks = keys
    assert check_mv(mv(kd, ks, 0, 1, b"B", [mv(kd, ks, 0, 0, b"A")]), kd, PARTS, 1) is not None
    assert check_mv(mv(kd, ks, 0, 1, b"B"), kd, PARTS, 1) == "justification below quorum"


# ---------------------------------------------------------------- protocol runs

def run_sink(n, f, proposals, protocol, seed=0, sink=None, budget=10000, **cfg):
    net = Network(n, f, seed=seed, config=NodeConfig(**cfg))
    net.set_sink(sink if sink is not None else range(n))
    members = sorted(sink) if sink is not None else range(n)
    handles = {}
    for i in members:
        mgr = net[i].consensus
        propose = {"bin": mgr.bin_propose, "mv": mgr.mv_propose, "vec": mgr.vec_propose}[protocol]
        handles[i] = propose("x", proposals[i])
    net.run_until(lambda: all(h.done for h in handles.values()), budget)
    return net, handles


def test_binary_unanimous_round_one():
    _, hs = run_sink(4, 1, [1, 1, 1, 1], "bin")
    assert {h.result for h in hs.values()} == {1}
    assert {h.rounds for h in hs.values()} == {1}


@pytest.mark.parametrize("seed", range(10))
def test_binary_divergent_agreement(seed):
    _, hs = run_sink(4, 1, [1, 0, 1, 0], "bin", seed=seed)
    assert all(h.done for h in hs.values())
    assert len({h.result for h in hs.values()}) == 1


def test_mv_unanimous_decides_value():
    _, hs = run_sink(4, 1, [b"X"] * 4, "mv")
    assert {h.result for h in hs.values()} == {b"X"}


@pytest.mark.parametrize("seed", range(8))
def test_mv_distinct_proposals_never_invent(seed):
    props = [b"a", b"b", b"c", b"d"]
    _, hs = run_sink(4, 1, props, "mv", seed=seed)
    results = {h.result for h in hs.values()}
    assert len(results) == 1
    assert results <= set(props) | {None}


@pytest.mark.parametrize("seed", range(5))
def test_vector_structure(seed):
    props = [b"a", b"b", b"c", b"d"]
    net, hs = run_sink(4, 1, props, "vec", seed=seed)
    results = {h.result for h in hs.values()}
    assert len(results) == 1
    cols, row = decode_row(results.pop())
    entries = [(c, e) for c, e in zip(cols, row) if e is not None]
    assert len(entries) == 3
    for c, e in entries:
        assert e.value == props[c]


def test_instance_reuse_and_membership_checks():
    net = Network(5, 1, seed=0)
    net.set_sink(range(4))
    net[0].consensus.bin_propose("dup", 1)
    with pytest.raises(DuplicateInstanceError):
        net[0].consensus.bin_propose("dup", 0)
    with pytest.raises(NotInSink):
        net[4].consensus.bin_propose("other", 1)
    lone = Network(4, 1, seed=0)
    with pytest.raises(SinkUnavailable):
        lone[0].consensus.bin_propose("x", 1)


def test_blocking_form_returns_value():
    net = Network(4, 1, seed=2)
    net.set_sink(range(4))
    hs = [net[i].consensus.mv_propose("b", b"V") for i in range(1, 4)]
    assert net[0].consensus.mv_propose("b", b"V", blocking=True, timeout=5000) == b"V"
    net.run_until(lambda: all(h.done for h in hs), 5000)


# ---------------------------------------------------------------- dissemination

def test_non_sink_nodes_accept_decision():
    sink = frozenset(range(4))
    net, hs = run_sink(10, 1, [b"v"] * 10, "mv", sink=sink)
    iid = InstanceId("x", ProtocolTag.MV)
    net.run_until(lambda: all(iid in net[i].results for i in range(4, 10)), 5000)
    for i in range(4, 10):
        assert net[i].results.get(iid).value == b"v"


def test_f_forged_decisions_are_not_enough():
    net = Network(10, 1, seed=3)
    net.set_sink(range(4))
    iid = InstanceId("forged", ProtocolTag.MV)
    data = encode_value(b"Z")
    signer = net[0]
    msg = Decision(iid, data, 0, signer.auth.sign(signer.key, decision_bytes(iid, data)))
    signer.beb.broadcast(msg, self_deliver=False)
    # a non-sink node signing is ignored outright
    outsider = net[7]
    bogus = Decision(iid, data, 7, outsider.auth.sign(outsider.key, decision_bytes(iid, data)))
    outsider.beb.broadcast(bogus, self_deliver=False)
    net.run(200)
    assert all(iid not in net[i].results for i in range(4, 10))
    assert net[5].metrics["decision_rejected"] >= 1


def test_late_node_recovers_result_by_query():
    # dissemination is off, so the outsider only learns the result by asking
    net, hs = run_sink(6, 1, [b"r"] * 6, "mv", sink=frozenset(range(4)), disseminate=False)
    iid = InstanceId("x", ProtocolTag.MV)
    assert iid not in net[5].results
    for i in range(4):
        mgr = net[i].consensus
        mgr.disseminate = True
        mgr._on_top_decision(iid, hs[i].result)
    got = []
    net[5].consensus.query_result(iid, got.append)
    net.run_until(lambda: bool(got), 2000)
    assert got == [b"r"]
