from dataclasses import replace
from itertools import combinations

import networkx as nx
from hypothesis import given, settings, strategies as st

from sitan.comm import KnowledgeGraph, disjoint_path_count, has_disjoint_paths
from sitan.node import Network, NodeConfig
from sitan.wire import AppMessage

from rrb_oracle import check_all, oracle_paths, simulate


def brute_disjoint(paths):
    paths = [frozenset(p) for p in set(map(frozenset, paths))]
    for k in range(len(paths), 0, -1):
        for combo in combinations(paths, k):
            if all(a.isdisjoint(b) for a, b in combinations(combo, 2)):
                return k
    return 0


def test_disjoint_examples():
    assert disjoint_path_count([(), ("b",), ("c",)]) == 3
    assert disjoint_path_count([("b",), ("b", "c")]) == 1
    assert has_disjoint_paths({frozenset(), frozenset({"b"})}, 2)
    assert not has_disjoint_paths({frozenset({"b"}), frozenset({"b", "c"})}, 2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sets(st.integers(0, 7), max_size=4), max_size=10))
def test_disjoint_count_matches_brute_force(paths):
    assert disjoint_path_count(paths) == brute_disjoint(paths)


def exact_disjoint(paths):
    """Maximum clique of the 'disjoint-with' graph over distinct paths."""
    nodes = list(set(map(frozenset, paths)))
    g = nx.Graph()
    g.add_nodes_from(range(len(nodes)))
    g.add_edges_from((i, j) for i, j in combinations(range(len(nodes)), 2)
                     if nodes[i].isdisjoint(nodes[j]))
    return nx.max_weight_clique(g, weight=None)[1] if nodes else 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sets(st.integers(0, 30), max_size=3), min_size=13, max_size=25))
def test_greedy_never_overcounts(paths):
    # above the exact-search limit the count is a lower bound
    assert disjoint_path_count(paths) <= exact_disjoint(paths)


def test_knowledge_graph_records_path_edges():
    kg = KnowledgeGraph()
    kg.add_path((0, 1, 2), 3)
    # each hop heard its predecessor directly
    assert kg.knows(1, 0) and kg.knows(2, 1) and kg.knows(3, 2)
    assert not kg.knows(0, 1) and not kg.knows(3, 0)
    kg.discard_node(1)
    assert not kg.knows(1, 0) and kg.knows(3, 2)


def test_beb_rejects_forged_and_duplicate_envelopes():
    net = Network(4, 1, seed=0)
    a, b = net[0], net[1]
    env = a.beb.broadcast(AppMessage(b"x"), self_deliver=False)
    net.run(50)
    assert len(b.app_inbox) == 1
    forged = replace(env, seq=env.seq + 1)        # signature no longer matches
    b.on_radio(forged)
    assert b.metrics["beb_rejected"] == 1
    b.on_radio(env)
    assert b.metrics["beb_duplicate"] == 1
    assert len(b.app_inbox) == 1


def test_rrb_clique_all_deliver():
    g = nx.complete_graph(4)
    assert all(simulate(g, 0, frozenset()).values())


def test_rrb_line_does_not_deliver_beyond_one_path():
    g = nx.path_graph(3)
    # the neighbour has only the direct link and the far end only the relay: one path each
    got = simulate(g, 0, frozenset())
    assert got == {1: False, 2: False}
    assert oracle_paths(g, 0, 1, frozenset()) == 1
    assert oracle_paths(g, 0, 2, frozenset()) == 1


def test_rrb_square_with_silent_relay():
    g = nx.cycle_graph(4)
    assert simulate(g, 0, frozenset())[2] is True
    assert simulate(g, 0, frozenset({1}))[2] is False


def test_rrb_oracle_small_graphs():
    cases, mismatches = check_all(max_n=4, f=1)
    assert cases > 50 and not mismatches


def test_rrb_retransmits_until_acknowledged():
    net = Network(4, 1, seed=5, config=NodeConfig(disseminate=False))
    net.sim.link = replace(net.sim.link, loss_probability=0.5)
    seq = net[0].rrb.broadcast(AppMessage(b"r"), expected={1, 2, 3})
    net.run_until(lambda: net[0].rrb.outgoing[seq].done, 5000)
    assert net[0].rrb.outgoing[seq].done
    assert net[0].metrics["rrb_retransmit"] > 0
    assert all(any(v == "rrb" for *_, v in net[i].app_inbox) for i in (1, 2, 3))
