import pytest
from hypothesis import given, strategies as st

from sitan.adversary import (AdversarySpec, BehaviorKind, Equivocate, NetworkFaults, Silent, _signed,
                             install, pick_byzantine)
from sitan.core import ProtocolTag
from sitan.node import Network
from sitan.wire import AppMessage, SignedEnvelope


def propose_all(net, nodes, value, label="a"):
    return {i: net[i].consensus.mv_propose(label, value) for i in nodes}


def test_silent_node_does_not_block_four_node_sink():
    net = Network(4, 1, seed=0)
    net.set_sink(range(4))
    install(net, AdversarySpec((3,), BehaviorKind.SILENT))
    assert isinstance(net[3].adversary, Silent)
    hs = propose_all(net, range(3), b"ok")
    net.run_until(lambda: all(h.done for h in hs.values()), 10000)
    assert {h.result for h in hs.values()} == {b"ok"}


def test_budget_is_enforced():
    net = Network(4, 1, seed=0)
    with pytest.raises(ValueError):
        install(net, AdversarySpec((0, 1), BehaviorKind.SILENT))
    with pytest.raises(ValueError):
        AdversarySpec((0,), forge_probability=1.5)


def test_spec_normalises_nodes_and_behavior():
    spec = AdversarySpec((3, 1, 3), "equivocate")
    assert spec.byzantine_nodes == (1, 3)
    assert spec.behavior is BehaviorKind.EQUIVOCATE


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_pick_byzantine_is_seeded(seed, count):
    a = pick_byzantine(range(10), count, seed)
    assert a == pick_byzantine(reversed(range(10)), count, seed)
    assert len(a) == count and set(a) <= set(range(10)) and list(a) == sorted(a)


def test_forged_identity_is_rejected_by_receivers():
    net = Network(4, 1, seed=1)
    install(net, AdversarySpec((0,), BehaviorKind.RANDOM_VALUES))
    net[0].adversary.forge_identity(AppMessage(b"fake"))
    net.run(100)
    victims_fooled = [i for i in range(1, 4)
                      if any(data == b"fake" for _, data, _ in net[i].app_inbox)]
    assert not victims_fooled
    assert sum(net[i].metrics["beb_rejected"] for i in range(1, 4)) >= 2
    assert net[0].metrics["adv_forged"] == 1


def test_router_splits_one_envelope_between_receivers():
    net = Network(5, 1, seed=2)
    install(net, AdversarySpec((0,), BehaviorKind.EQUIVOCATE))
    assert isinstance(net[0].adversary, Equivocate)
    router = net.adversary_router
    got = {}
    for i in range(1, 5):
        net.sim.attach(i, lambda env, i=i: got.setdefault(i, env.payload))
    node = net[0]
    node.beb.seq += 1
    a = _signed(node, node.beb.seq, AppMessage(b"A"))
    b = _signed(node, node.beb.seq, AppMessage(b"B"))
    router.routes[id(a)] = (b, frozenset({2, 4}))
    net.sim.radio_broadcast(0, a)
    net.run(50)
    assert {i: m.data for i, m in got.items()} == {1: b"A", 2: b"B", 3: b"A", 4: b"B"}


def test_equivocation_never_breaks_mv_agreement():
    for seed in range(5):
        net = Network(4, 1, seed=seed)
        net.set_sink(range(4))
        install(net, AdversarySpec((0,), BehaviorKind.EQUIVOCATE))
        hs = {i: net[i].consensus.mv_propose("e", bytes([65 + i])) for i in range(4)}
        net.run_until(lambda: all(hs[i].done for i in (1, 2, 3)), 10000)
        assert len({hs[i].result for i in (1, 2, 3)}) == 1


def test_isolation_cuts_and_heals_links():
    net = Network(4, 1, seed=0)
    install(net, AdversarySpec(network=NetworkFaults(loss_probability=0.0, isolated=(3,),
                                                     reconnect_at=100.0)))
    probe = SignedEnvelope(3, 1, ProtocolTag.BEB, AppMessage(b"p"), b"sig")
    assert net.sim.radio_broadcast(3, probe) == 0
    net.run(150)
    assert net.sim.radio_broadcast(3, probe) == 3
