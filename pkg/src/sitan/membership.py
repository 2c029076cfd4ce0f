"""Neighbour discovery, network discovery and sink formation.

Pipeline per node:

1. heartbeats over BEB fill the neighbour table; silent entries expire after
   ``5 * heartbeat interval``;
2. discovery asks neighbours for their (signed) neighbour lists and walks the
   graph transitively until nothing is pending or the deadline passes;
3. each node RRB-broadcasts its ``known`` set; once the known sets of the
   candidates are in, every node runs the same deterministic clique search
   over the mutual-knowledge graph and obtains the same sink.

Neighbour lists are signed by their owner and relayed verbatim, so a
Byzantine node can only lie about its own adjacency, and a mutual edge needs
both endpoints to assert it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, ClassVar, Iterable, Optional

from .core import NodeId
from .node import SinkView
from .wire import Message, MessageType, Reader, Writer, register

if TYPE_CHECKING:
    from .node import Node

log = logging.getLogger(__name__)

EXPIRY_FACTOR = 5


# --------------------------------------------------------------------------
# messages
# --------------------------------------------------------------------------

@register
@dataclass(frozen=True)
class Heartbeat(Message):
    TYPE: ClassVar[MessageType] = MessageType.HEARTBEAT
    sender: NodeId
    beat: int

    def write_body(self, w: Writer) -> None:
        w.u32(self.sender).u64(self.beat)

    @classmethod
    def read_body(cls, r: Reader) -> "Heartbeat":
        return cls(r.u32(), r.u64())


@register
@dataclass(frozen=True)
class GetNeighbors(Message):
    TYPE: ClassVar[MessageType] = MessageType.GET_NEIGHBORS
    requester: NodeId
    wanted: tuple[NodeId, ...]

    def write_body(self, w: Writer) -> None:
        w.u32(self.requester).ids(self.wanted)

    @classmethod
    def read_body(cls, r: Reader) -> "GetNeighbors":
        return cls(r.u32(), r.ids())


def neighbor_list_bytes(owner: NodeId, version: int, neighbors: tuple[NodeId, ...]) -> bytes:
    return Writer().raw(b"NBR").u32(owner).u64(version).ids(neighbors).getvalue()


@dataclass(frozen=True)
class NeighborList:
    owner: NodeId
    version: int
    neighbors: tuple[NodeId, ...]
    signature: bytes


@register
@dataclass(frozen=True)
class SetNeighbors(Message):
    """Reply to ``requester`` with signed lists (the sender's own and relayed ones)."""

    TYPE: ClassVar[MessageType] = MessageType.SET_NEIGHBORS
    requester: NodeId
    lists: tuple[NeighborList, ...]

    def write_body(self, w: Writer) -> None:
        w.u32(self.requester).u16(len(self.lists))
        for nl in self.lists:
            w.u32(nl.owner).u64(nl.version).ids(nl.neighbors).blob(nl.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "SetNeighbors":
        req = r.u32()
        lists = tuple(NeighborList(r.u32(), r.u64(), r.ids(), r.blob()) for _ in range(r.u16()))
        return cls(req, lists)


@register
@dataclass(frozen=True)
class KnownSet(Message):
    TYPE: ClassVar[MessageType] = MessageType.KNOWN_SET
    sender: NodeId
    epoch: int
    known: tuple[NodeId, ...]

    def write_body(self, w: Writer) -> None:
        w.u32(self.sender).u32(self.epoch).ids(self.known)

    @classmethod
    def read_body(cls, r: Reader) -> "KnownSet":
        return cls(r.u32(), r.u32(), r.ids())


# --------------------------------------------------------------------------
# sink computation (pure functions, shared with tests and the auditor)
# --------------------------------------------------------------------------

def mutual_graph(nnei: dict[NodeId, Iterable[NodeId]], known_sets: dict[NodeId, Iterable[NodeId]],
                 f: int) -> dict[NodeId, set[NodeId]]:
    """Edge a-b iff each lists the other and their known sets share >= 3f+1 nodes."""
    lists = {a: set(v) for a, v in nnei.items()}
    known = {a: set(v) for a, v in known_sets.items()}
    adj: dict[NodeId, set[NodeId]] = {a: set() for a in lists}
    for a, na in lists.items():
        for b in na:
            if b == a or b not in lists or a not in lists[b]:
                continue
            ka, kb = known.get(a), known.get(b)
            if ka is None or kb is None or len(ka & kb) < 3 * f + 1:
                continue
            adj[a].add(b)
            adj[b].add(a)
    return adj


def greedy_clique(adj: dict[NodeId, set[NodeId]], min_size: int,
                  cap: Optional[int] = None) -> Optional[frozenset]:
    """First clique of at least ``min_size`` found by the deterministic greedy search.

    Seeds are tried in ascending id order; each clique grows by the smallest
    vertex adjacent to every current member, stopping at ``cap``.
    """
    for seed in sorted(adj):
        clique = [seed]
        candidates = set(adj[seed])
        while candidates and (cap is None or len(clique) < cap):
            nxt = min(candidates)
            clique.append(nxt)
            candidates &= adj[nxt]
        if len(clique) >= min_size:
            return frozenset(clique)
    return None


def is_clique(adj: dict[NodeId, set[NodeId]], members: Iterable[NodeId]) -> bool:
    members = list(members)
    return all(b in adj.get(a, ()) for i, a in enumerate(members) for b in members[i + 1:])


# --------------------------------------------------------------------------
# protocol
# --------------------------------------------------------------------------

@dataclass
class DiscoveryResult:
    known: frozenset
    partial: bool


class Membership:
    def __init__(self, node: "Node", heartbeat_ms: Optional[float] = None,
                 deadline_intervals: Optional[int] = None, sink_cap: Optional[int] = None,
                 settle_intervals: int = 3) -> None:
        cfg = node.config
        self.node = node
        self.f = node.budget.f
        self.interval = heartbeat_ms or cfg.heartbeat_ms
        self.deadline_intervals = deadline_intervals or cfg.discovery_deadline_intervals
        self.sink_cap = sink_cap if sink_cap is not None else cfg.sink_cap
        self.settle_ms = settle_intervals * self.interval
        self.neighbors: dict[NodeId, float] = {}
        self.known: set[NodeId] = {node.id}
        self.nnei: dict[NodeId, tuple[NodeId, ...]] = {}
        self.lists: dict[NodeId, NeighborList] = {}
        self.pending: set[NodeId] = set()
        self.known_sets: dict[NodeId, tuple[int, frozenset]] = {}
        self.epoch = 0
        self.beat = 0
        self.list_version = 0
        self.discovery: Optional[DiscoveryResult] = None
        self.started = False
        self._discovery_deadline = 0.0
        self._retry_timer: Optional[int] = None
        self._recompute_at: Optional[float] = None
        node.membership = self

    # ------------------------------------------------------------------ heartbeats

    def start(self, discovery_delay_ms: Optional[float] = None) -> None:
        """Start heartbeats; discovery begins after ``discovery_delay_ms`` (default 2 intervals)."""
        self.started = True
        sim = self.node.sim
        sim.set_timer(self.node.id, self.interval, True, self.heartbeat_tick)
        self.heartbeat_tick()
        delay = 2 * self.interval if discovery_delay_ms is None else discovery_delay_ms
        sim.set_timer(self.node.id, delay, False, self.run_discovery)

    def heartbeat_tick(self) -> None:
        self.beat += 1
        self.node.beb.broadcast(Heartbeat(self.node.id, self.beat), self_deliver=False)
        self._expire()

    def on_heartbeat(self, sender: NodeId) -> None:
        fresh = sender not in self.neighbors
        self.neighbors[sender] = self.node.sim.now
        if fresh:
            self.known.add(sender)
            self.node.trace("NEIGHBOR_ADD", neighbor=sender)

    def _expire(self) -> None:
        now = self.node.sim.now
        limit = EXPIRY_FACTOR * self.interval
        gone = [j for j, t in self.neighbors.items() if now - t > limit]
        for j in gone:
            del self.neighbors[j]
            self.node.trace("NEIGHBOR_REMOVE", neighbor=j)
            self.node.metrics["neighbor_removed"] += 1
            sink = self.node.sink
            if sink is not None and j in sink.members:
                self.node.trace("SINK_MEMBER_LOST", neighbor=j)
                self._schedule_recompute(lost=j)

    # ------------------------------------------------------------------ discovery

    def _own_list(self) -> NeighborList:
        neigh = tuple(sorted(self.neighbors))
        cur = self.lists.get(self.node.id)
        if cur is not None and cur.neighbors == neigh:
            return cur
        self.list_version += 1
        node = self.node
        sig = node.auth.sign(node.key, neighbor_list_bytes(node.id, self.list_version, neigh))
        nl = NeighborList(node.id, self.list_version, neigh, sig)
        self._store_list(nl)
        return nl

    def _store_list(self, nl: NeighborList) -> bool:
        cur = self.lists.get(nl.owner)
        if cur is not None and cur.version >= nl.version:
            return False
        self.lists[nl.owner] = nl
        self.nnei[nl.owner] = nl.neighbors
        return True

    def run_discovery(self) -> None:
        node = self.node
        self._own_list()
        self.pending = set(self.known) - {node.id} - set(self.lists)
        self._discovery_deadline = node.sim.now + self.deadline_intervals * self.interval
        self.discovery = None
        node.trace("DISCOVERY_START", pending=sorted(self.pending))
        self._query()

    def _query(self) -> None:
        node = self.node
        self._retry_timer = None
        if self.discovery is not None:
            return
        if not self.pending:
            self._finish_discovery(partial=len(self.known) <= 1)
            return
        if node.sim.now >= self._discovery_deadline:
            self._finish_discovery(partial=True)
            return
        node.beb.broadcast(GetNeighbors(node.id, tuple(sorted(self.pending))), self_deliver=False)
        self._retry_timer = node.sim.set_timer(node.id, self.interval, False, self._query)

    def _finish_discovery(self, partial: bool) -> None:
        node = self.node
        self.discovery = DiscoveryResult(frozenset(self.known), partial)
        node.trace("DISCOVERY_DONE", known=sorted(self.known), partial=partial)
        if partial and len(self.known) <= 1:
            node.set_sink(None)
            return
        self.compute_sink()

    def on_get_neighbors(self, msg: GetNeighbors, sender: NodeId) -> None:
        if msg.requester != sender:
            return
        lists = [self._own_list()]
        for w in msg.wanted:
            nl = self.lists.get(w)
            if nl is not None and w != self.node.id:
                lists.append(nl)
        self.node.beb.broadcast(SetNeighbors(msg.requester, tuple(lists)), self_deliver=False)

    def on_set_neighbors(self, msg: SetNeighbors, sender: NodeId) -> None:
        node = self.node
        keydir = node.keydir
        for nl in msg.lists:
            if not keydir.verify(nl.owner, neighbor_list_bytes(nl.owner, nl.version, nl.neighbors),
                                 nl.signature):
                node.metrics["neighbor_list_rejected"] += 1
                continue
            if msg.requester == node.id or nl.owner not in self.lists:
                self._store_list(nl)
        if msg.requester != node.id or self.discovery is not None:
            return
        for owner in [nl.owner for nl in msg.lists if nl.owner in self.lists]:
            self.pending.discard(owner)
            for j in self.nnei.get(owner, ()):
                if j not in self.known:
                    self.known.add(j)
                    if j not in self.lists:
                        self.pending.add(j)
        if not self.pending:
            if self._retry_timer is not None:
                node.sim.cancel_timer(self._retry_timer)
                self._retry_timer = None
            self._query()

    # ------------------------------------------------------------------ sink

    def compute_sink(self) -> None:
        node = self.node
        known = frozenset(self.known)
        self.known_sets[node.id] = (self.epoch, known)
        node.rrb.broadcast(KnownSet(node.id, self.epoch, tuple(sorted(known))),
                           expected=set(self.known) - {node.id}, self_deliver=False)
        self._evaluate()

    def on_known_set(self, msg: KnownSet, sender: NodeId) -> None:
        if msg.sender != sender:
            return
        cur = self.known_sets.get(sender)
        if cur is not None and cur[0] > msg.epoch:
            return
        self.known_sets[sender] = (msg.epoch, frozenset(msg.known))
        if self.discovery is not None:
            self._evaluate()

    def _evaluate(self) -> None:
        """Recompute the sink once every known node's known set is in."""
        node = self.node
        missing = [j for j in self.known if j not in self.known_sets]
        if missing:
            return
        sets = {j: s for j, (_, s) in self.known_sets.items() if j in self.known}
        adj = mutual_graph({j: v for j, v in self.nnei.items() if j in self.known}, sets, self.f)
        members = greedy_clique(adj, 3 * self.f + 1, self.sink_cap)
        old = node.sink
        if members is None:
            if old is not None or node.metrics["sink_unavailable"] == 0:
                node.metrics["sink_unavailable"] += 1
                node.set_sink(None)
            return
        if old is not None and old.members == members:
            return
        node.set_sink(SinkView(members, self.epoch))

    def _schedule_recompute(self, lost: NodeId) -> None:
        node = self.node
        self.known.discard(lost)
        self.known_sets.pop(lost, None)
        self.nnei.pop(lost, None)
        self.lists.pop(lost, None)
        node.rrb.kg.discard_node(lost)
        if self._recompute_at is not None:
            return
        self._recompute_at = node.sim.now + self.settle_ms
        node.sim.set_timer(node.id, self.settle_ms, False, self._recompute)

    def _recompute(self) -> None:
        self._recompute_at = None
        self.epoch += 1
        self.node.metrics["sink_recomputed"] += 1
        self.node.trace("SINK_RECOMPUTE", epoch=self.epoch)
        self.lists = {k: v for k, v in self.lists.items() if k in self.known}
        self.run_discovery()

    # ------------------------------------------------------------------ routing

    def on_message(self, payload: Message, sender: NodeId, via: str) -> None:
        if isinstance(payload, Heartbeat):
            if payload.sender == sender:
                self.on_heartbeat(sender)
        elif isinstance(payload, GetNeighbors):
            self.on_get_neighbors(payload, sender)
        elif isinstance(payload, SetNeighbors):
            self.on_set_neighbors(payload, sender)
        elif isinstance(payload, KnownSet):
            self.on_known_set(payload, sender)
