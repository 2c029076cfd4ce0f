from collections import Counter
from itertools import combinations

import networkx as nx
from hypothesis import given, settings, strategies as st

from sitan.membership import Membership, greedy_clique, is_clique, mutual_graph
from sitan.netsim import TopologyConfig
from sitan.node import Network


def start_all(net, **kw):
    return [Membership(node, **kw) for node in net]


def count_broadcasts(net):
    sent = Counter()
    for node in net:
        orig = node.beb.broadcast

        def wrapped(payload, *a, _orig=orig, **kw):
            sent[type(payload).__name__] += 1
            return _orig(payload, *a, **kw)
        node.beb.broadcast = wrapped
    return sent


def test_heartbeats_fill_tables_symmetrically():
    net = Network(4, 1, seed=3)
    ms = start_all(net)
    for m in ms:
        m.node.sim.set_timer(m.node.id, m.interval, True, m.heartbeat_tick)
        m.heartbeat_tick()
    net.run(250)
    for m in ms:
        assert set(m.neighbors) == set(range(4)) - {m.node.id}


def test_clique_of_four_discovery_counts():
    net = Network(4, 1, seed=1)
    sent = count_broadcasts(net)
    ms = start_all(net)
    for m in ms:
        m.start()
    net.run(1000)
    assert sent["GetNeighbors"] == 4
    assert sent["SetNeighbors"] == 12
    for m in ms:
        assert m.discovery.known == frozenset(range(4)) and not m.discovery.partial
        assert set(m.nnei) == set(range(4))
        assert m.node.sink.members == frozenset(range(4))


def test_line_learns_transitively():
    # a-b-c with 4 m spacing and 5 m range: a cannot hear c
    topo = TopologyConfig(kind="explicit", width=10, height=1, radio_range=5.0,
                          positions=((0, 0), (4, 0), (8, 0), (8, 1)))
    net = Network(4, 1, topology=topo, seed=2)
    assert not net.sim.in_range(0, 2)
    ms = start_all(net)
    for m in ms:
        m.start()
    net.run(1500)
    assert 2 in ms[0].known and 2 not in ms[0].neighbors
    # 0 only mutually hears 1, so no 4-clique exists
    assert ms[0].node.sink is None


def test_isolated_node_is_partial():
    topo = TopologyConfig(kind="explicit", width=100, height=100, radio_range=5.0,
                          positions=((0, 0), (1, 0), (0, 1), (90, 90)))
    net = Network(4, 1, topology=topo, seed=4)
    ms = start_all(net)
    for m in ms:
        m.start()
    net.run(3000)
    assert ms[3].discovery.known == frozenset({3})
    assert ms[3].discovery.partial
    assert ms[3].node.sink is None


def test_full_seven_node_sink():
    net = Network(7, 2, seed=5)
    ms = start_all(net)
    for m in ms:
        m.start()
    net.run(1500)
    assert {m.node.sink.members for m in ms} == {frozenset(range(7))}


def test_crash_removal_and_recompute():
    net = Network(5, 1, seed=6)
    ms = start_all(net)
    for m in ms:
        m.start()
    net.run(1000)
    assert ms[0].node.sink.members == frozenset(range(5))
    net.sim.crash(4)
    net.run(3000)
    for m in ms[:4]:
        assert 4 not in m.neighbors
        assert m.node.sink.members == frozenset(range(4))
        assert m.epoch >= 1
        assert m.node.metrics["sink_recomputed"] >= 1


def test_bridge_clusters_by_hand():
    # clusters {0..4} (clique), {5,6,7}, {8,9}; bridges 4-5 and 7-8
    edges = set(combinations(range(5), 2)) | {(5, 6), (5, 7), (6, 7), (8, 9), (4, 5), (7, 8)}
    nbrs = {i: set() for i in range(10)}
    for a, b in edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    known = {i: set(range(10)) for i in range(10)}
    adj = mutual_graph(nbrs, known, 1)
    # seed 0 grows 0,1,2,3,4 then no common neighbour remains
    assert greedy_clique(adj, 4) == frozenset(range(5))
    assert greedy_clique(adj, 4, cap=4) == frozenset(range(4))
    assert greedy_clique(adj, 6) is None


def test_mutual_edges_need_both_endpoints_and_similar_knowledge():
    nbrs = {0: {1, 2}, 1: {0}, 2: set()}
    known = {0: {0, 1, 2, 3}, 1: {0, 1, 2, 3}, 2: {0, 1, 2, 3}}
    adj = mutual_graph(nbrs, known, 1)
    assert adj[0] == {1} and adj[2] == set()
    known[1] = {0, 1, 2}
    assert mutual_graph(nbrs, known, 1)[0] == set()


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 12).flatmap(lambda n: st.tuples(
    st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=n * n))),
    st.integers(0, 3))
def test_greedy_clique_is_a_clique(graph, f):
    n, edges = graph
    adj = {i: set() for i in range(n)}
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    found = greedy_clique(adj, 3 * f + 1)
    if found is not None:
        assert len(found) >= 3 * f + 1 and is_clique(adj, found)
        assert greedy_clique(adj, 3 * f + 1) == found
    else:
        # greedy may miss cliques, but never when the whole graph is one
        g = nx.Graph(adj)
        assert not (nx.density(g) == 1.0 and n >= 3 * f + 1)
