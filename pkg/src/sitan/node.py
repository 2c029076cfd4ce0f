"""A simulated device: protocol layers wired to one simulator actor."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .comm import BestEffortBroadcast, ReachableReliableBroadcast, RrbAck, RrbData
from .consensus.manager import ConsensusManager
from .core import (FaultBudget, InstanceRegistry, KeyDirectory, NodeId, ProtocolTag, ResultCache,
                   SimAuthenticator)
from .netsim import LinkModel, Simulator, TopologyConfig
from .wire import Message, MessageType, SignedEnvelope

log = logging.getLogger(__name__)

_MEMBERSHIP = {MessageType.HEARTBEAT, MessageType.GET_NEIGHBORS, MessageType.SET_NEIGHBORS,
               MessageType.KNOWN_SET}
_CONSENSUS = {MessageType.BIN_PHASE, MessageType.BIN_DECIDED, MessageType.MV_MSG,
              MessageType.VEC_ROW, MessageType.DECISION, MessageType.RESULT_QUERY}


@dataclass(frozen=True)
class NodeConfig:
    heartbeat_ms: float = 100.0
    consensus_tick_ms: float = 10.0
    consensus_transport: str = "beb"       # "beb" inside the one-hop sink, or "rrb"
    all_nodes: bool = False                # run consensus over every node, not the sink
    rrb_retransmit_ms: float = 1.0
    rrb_backoff_cap: int = 16
    rrb_max_forwards: Optional[int] = None
    discovery_deadline_intervals: int = 20
    sink_cap: Optional[int] = None
    disseminate: bool = True
    result_horizon_ms: float = float("inf")


@dataclass(frozen=True)
class SinkView:
    members: frozenset
    epoch: int = 0

    def __contains__(self, node: NodeId) -> bool:
        return node in self.members


class Node:
    def __init__(self, node_id: NodeId, network: "Network") -> None:
        self.id = node_id
        self.network = network
        self.sim: Simulator = network.sim
        self.keydir: KeyDirectory = network.keydir
        self.auth = network.keydir.auth
        self.seed = network.seed
        self.key = network.keydir.create(node_id, network.seed)
        self.budget: FaultBudget = network.budget
        self.config: NodeConfig = network.config
        self.tracer = network.tracer
        self.metrics: Counter = Counter()
        self.adversary = None
        self.sink: Optional[SinkView] = None
        self.registry = InstanceRegistry()
        self.results = ResultCache(self.config.result_horizon_ms)
        self.app_inbox: list[tuple[NodeId, bytes, str]] = []
        self.app_listeners: list[Callable[[NodeId, bytes, str], None]] = []
        self.sink_listeners: list[Callable[[Optional[SinkView]], None]] = []
        self.beb = BestEffortBroadcast(self)
        cfg = self.config
        self.rrb = ReachableReliableBroadcast(self, cfg.rrb_max_forwards, cfg.rrb_retransmit_ms,
                                              cfg.rrb_backoff_cap)
        self.membership = None
        self.consensus = ConsensusManager(self, cfg.consensus_transport, cfg.consensus_tick_ms,
                                          cfg.all_nodes, cfg.disseminate)
        self.sim.attach(node_id, self.on_radio)

    def __repr__(self) -> str:
        return f"Node({self.id})"

    # ------------------------------------------------------------------ plumbing

    def trace(self, kind: str, **data) -> None:
        if self.tracer is not None:
            self.tracer.record(self.sim.now, self.id, kind, data)

    def all_node_ids(self) -> frozenset:
        return self.network.ids

    def default_rrb_targets(self) -> set[NodeId]:
        if self.sink is not None:
            return set(self.sink.members)
        known = set(self.beb.acquaintances)
        if self.membership is not None:
            known |= self.membership.known
        return known

    def set_sink(self, sink: Optional[SinkView]) -> None:
        self.sink = sink
        if sink is not None:
            self.trace("SINK", members=sorted(sink.members), epoch=sink.epoch)
        else:
            self.trace("SINK_UNAVAILABLE")
        for cb in self.sink_listeners:
            cb(sink)

    def transmit(self, env: SignedEnvelope, layer: str) -> None:
        if self.adversary is not None and not self.adversary.allow_transmit(self, env):
            return
        self.metrics[f"sent_{layer}"] += 1
        self.sim.radio_broadcast(self.id, env, layer)

    def may_forward(self, msg: Message) -> bool:
        return self.adversary is None or self.adversary.allow_forward(self, msg)

    def may_ack(self, data: RrbData) -> bool:
        return self.adversary is None or self.adversary.allow_ack(self, data)

    # ------------------------------------------------------------------ receiving

    def on_radio(self, env: SignedEnvelope) -> None:
        if not self.beb.deliver(env):
            return
        if env.tag is ProtocolTag.RRB and isinstance(env.payload, RrbData):
            self.rrb.on_receive(env)
        else:
            self.dispatch(env.payload, env.sender, "beb")

    def dispatch(self, payload: Message, sender: NodeId, via: str) -> None:
        t = payload.TYPE
        if t is MessageType.RRB_ACK:
            if isinstance(payload, RrbAck):
                self.rrb.on_ack(payload)
        elif t in _CONSENSUS:
            self.consensus.on_message(payload, sender, via)
        elif t in _MEMBERSHIP:
            if self.membership is not None:
                self.membership.on_message(payload, sender, via)
        elif t is MessageType.APP:
            self.app_inbox.append((sender, payload.data, via))
            for cb in self.app_listeners:
                cb(sender, payload.data, via)


class Network:
    """A simulator plus ``n`` keyed nodes sharing one configuration."""

    def __init__(self, n: int, f: int, topology: Optional[TopologyConfig] = None,
                 link: Optional[LinkModel] = None, seed: int = 0,
                 config: Optional[NodeConfig] = None, tracer: Any = None,
                 authenticator=None, record_events: bool = False) -> None:
        self.n = n
        self.seed = seed
        self.budget = FaultBudget(n, f)
        self.config = config or NodeConfig()
        self.tracer = tracer
        self.sim = Simulator(n, topology, link, seed, record_events=record_events)
        self.keydir = KeyDirectory(authenticator or SimAuthenticator())
        self.ids = frozenset(range(n))
        self.nodes = [Node(i, self) for i in range(n)]

    def __getitem__(self, i: NodeId) -> Node:
        return self.nodes[i]

    def __iter__(self):
        return iter(self.nodes)

    def __len__(self) -> int:
        return self.n

    def set_sink(self, members) -> SinkView:
        view = SinkView(frozenset(members))
        for node in self.nodes:
            node.set_sink(view)
        return view

    def run(self, until: float) -> float:
        return self.sim.run(until=until)

    def run_until(self, predicate: Callable[[], bool], timeout: float) -> bool:
        return self.sim.run_until(predicate, timeout)

    def sent(self) -> Counter:
        total: Counter = Counter()
        for node in self.nodes:
            total.update(node.metrics)
        return total
