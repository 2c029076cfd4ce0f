"""Exhaustive RRB check against a Menger-style oracle on small graphs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import networkx as nx

from sitan.core import FaultBudget
from sitan.node import Network, NodeConfig
from sitan.wire import AppMessage


class _NoForward:
    """Relay that accepts and acknowledges but never forwards."""

    def allow_transmit(self, node, env):
        return True

    def allow_forward(self, node, msg):
        return False

    def allow_ack(self, node, data):
        return True

    def on_consensus_send(self, node, msg):
        return msg


def oracle_paths(g: nx.Graph, src: int, dst: int, bad: frozenset) -> int:
    """Node-disjoint src->dst paths whose intermediate nodes are all correct."""
    h = g.subgraph(set(g) - bad).copy()
    direct = h.has_edge(src, dst)
    if direct:
        h.remove_edge(src, dst)
    if not nx.has_path(h, src, dst):
        return int(direct)
    return int(direct) + nx.algorithms.connectivity.local_node_connectivity(h, src, dst)


def connected_graphs(max_n: int):
    for g in nx.graph_atlas_g():
        if 2 <= g.number_of_nodes() <= max_n and nx.is_connected(g):
            yield g


@dataclass
class Mismatch:
    edges: tuple
    origin: int
    bad: frozenset
    node: int
    expected: bool
    got: bool


def simulate(g: nx.Graph, origin: int, bad: frozenset, f: int = 1, seed: int = 0,
             horizon_ms: float = 400.0) -> dict[int, bool]:
    n = g.number_of_nodes()
    net = Network(max(n, 3 * f + 1), 0, seed=seed, config=NodeConfig(disseminate=False))
    # the consensus bound n >= 3f+1 does not apply to broadcast alone
    for node in net:
        node.budget = FaultBudget(net.n, 0)
        node.rrb.paths_needed = f + 1
        node.rrb.max_forwards = f + 1
    net.sim.set_adjacency(g.edges())
    for b in bad:
        net[b].adversary = _NoForward()
    targets = set(range(n)) - {origin}
    net[origin].rrb.broadcast(AppMessage(b"probe"), expected=targets)
    net.run(horizon_ms)
    return {v: any(via == "rrb" for _, _, via in net[v].app_inbox) for v in range(n) if v != origin}


def check_all(max_n: int = 6, f: int = 1, seed: int = 0) -> tuple[int, list[Mismatch]]:
    cases, bad_cases = 0, []
    for g in connected_graphs(max_n):
        n = g.number_of_nodes()
        for origin in range(n):
            others = [v for v in range(n) if v != origin]
            for k in range(f + 1):
                for bad in map(frozenset, itertools.combinations(others, k)):
                    got = simulate(g, origin, bad, f, seed)
                    cases += 1
                    for v, delivered in got.items():
                        if v in bad:
                            continue
                        want = oracle_paths(g, origin, v, bad) >= f + 1
                        if want != delivered:
                            bad_cases.append(Mismatch(tuple(g.edges()), origin, bad, v, want, delivered))
    return cases, bad_cases
