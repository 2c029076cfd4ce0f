"""Best-effort broadcast and reachable reliable broadcast."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, ClassVar, Iterable, Optional

from .core import NodeId, ProtocolTag
from .wire import Message, MessageType, Reader, SignedEnvelope, Writer, register

if TYPE_CHECKING:
    from .node import Node

DEDUP_WINDOW = 4096
EXACT_PATH_LIMIT = 12


# --------------------------------------------------------------------------
# disjoint paths
# --------------------------------------------------------------------------

def _greedy_disjoint(paths: Iterable[frozenset]) -> int:
    used: set = set()
    count = 0
    for p in sorted(paths, key=lambda s: (len(s), sorted(s))):
        if used.isdisjoint(p):
            used.update(p)
            count += 1
    return count


def _exact_disjoint(paths: list[frozenset], target: int | None = None) -> int:
    paths = sorted(paths, key=lambda s: (len(s), sorted(s)))
    best = 0

    def search(i: int, used: frozenset, count: int) -> bool:
        nonlocal best
        if count > best:
            best = count
            if target is not None and best >= target:
                return True
        if i == len(paths) or count + (len(paths) - i) <= best:
            return False
        p = paths[i]
        if used.isdisjoint(p) and search(i + 1, used | p, count + 1):
            return True
        return search(i + 1, used, count)

    search(0, frozenset(), 0)
    return best


def disjoint_path_count(paths: Iterable[Iterable[NodeId]]) -> int:
    """Maximum number of pairwise node-disjoint paths.

    Each path is given by its set of intermediate nodes (the direct link is
    the empty set).  Exact search up to ``EXACT_PATH_LIMIT`` distinct paths,
    greedy above that; the greedy answer is always a valid packing, so it can
    only undercount.
    """
    uniq = list({frozenset(p) for p in paths})
    if len(uniq) <= EXACT_PATH_LIMIT:
        return _exact_disjoint(uniq)
    return _greedy_disjoint(uniq)


def has_disjoint_paths(paths: set[frozenset], k: int) -> bool:
    if len(paths) < k:
        return False
    if _greedy_disjoint(paths) >= k:
        return True
    if len(paths) <= EXACT_PATH_LIMIT:
        return _exact_disjoint(list(paths), target=k) >= k
    return False


# --------------------------------------------------------------------------
# knowledge graph
# --------------------------------------------------------------------------

class KnowledgeGraph:
    """Directed "a knows b" edges learned from visited lists and discovery."""

    def __init__(self) -> None:
        self.edges: set[tuple[NodeId, NodeId]] = set()

    def add(self, a: NodeId, b: NodeId) -> None:
        if a != b:
            self.edges.add((a, b))

    def add_path(self, visited: tuple[NodeId, ...], receiver: NodeId) -> None:
        # each hop heard the previous one directly
        for u, v in zip(visited, visited[1:]):
            if u != v:
                self.edges.add((v, u))
        if visited and visited[-1] != receiver:
            self.edges.add((receiver, visited[-1]))

    def knows(self, a: NodeId, b: NodeId) -> bool:
        return (a, b) in self.edges

    def discard_node(self, x: NodeId) -> None:
        self.edges = {e for e in self.edges if x not in e}

    def nodes(self) -> set[NodeId]:
        return {a for e in self.edges for a in e}

    def __len__(self) -> int:
        return len(self.edges)


# --------------------------------------------------------------------------
# messages
# --------------------------------------------------------------------------

def rrb_signed_bytes(origin: NodeId, origin_seq: int, payload: Message) -> bytes:
    return Writer().raw(b"RRB").u32(origin).u64(origin_seq).blob(payload.encode()).getvalue()


@register
@dataclass(frozen=True)
class RrbData(Message):
    """Origin-signed RRB content.

    ``attempt`` and ``missing`` are retransmission hints; they sit outside the
    origin signature, like the visited list in the envelope.
    """

    TYPE: ClassVar[MessageType] = MessageType.RRB_DATA
    origin: NodeId
    origin_seq: int
    payload: Message
    origin_signature: bytes
    attempt: int = 0
    missing: tuple[NodeId, ...] = ()

    def write_body(self, w: Writer) -> None:
        w.u32(self.origin).u64(self.origin_seq).message(self.payload)
        w.blob(self.origin_signature).u32(self.attempt).ids(self.missing)

    @classmethod
    def read_body(cls, r: Reader) -> "RrbData":
        return cls(r.u32(), r.u64(), r.message(), r.blob(), r.u32(), r.ids())


def ack_signed_bytes(acker: NodeId, origin: NodeId, origin_seq: int) -> bytes:
    return Writer().raw(b"ACK").u32(acker).u32(origin).u64(origin_seq).getvalue()


@register
@dataclass(frozen=True)
class RrbAck(Message):
    TYPE: ClassVar[MessageType] = MessageType.RRB_ACK
    acker: NodeId
    origin: NodeId
    origin_seq: int
    attempt: int
    signature: bytes

    def write_body(self, w: Writer) -> None:
        w.u32(self.acker).u32(self.origin).u64(self.origin_seq).u32(self.attempt).blob(self.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "RrbAck":
        return cls(r.u32(), r.u32(), r.u64(), r.u32(), r.blob())


LAYER_OF = {
    MessageType.APP: "app",
    MessageType.HEARTBEAT: "membership",
    MessageType.GET_NEIGHBORS: "membership",
    MessageType.SET_NEIGHBORS: "membership",
    MessageType.KNOWN_SET: "membership",
    MessageType.BIN_PHASE: "consensus",
    MessageType.BIN_DECIDED: "consensus",
    MessageType.MV_MSG: "consensus",
    MessageType.VEC_ROW: "consensus",
    MessageType.DECISION: "dissemination",
    MessageType.RESULT_QUERY: "dissemination",
    MessageType.RRB_ACK: "rrb_ack",
}


def layer_of(payload: Message) -> str:
    if isinstance(payload, RrbData):
        return LAYER_OF.get(payload.payload.TYPE, "app")
    return LAYER_OF.get(payload.TYPE, "app")


# --------------------------------------------------------------------------
# best effort broadcast
# --------------------------------------------------------------------------

class BestEffortBroadcast:
    def __init__(self, node: "Node") -> None:
        self.node = node
        self.seq = 0
        self.highest: dict[NodeId, int] = {}
        self.seen: dict[NodeId, set[int]] = {}
        self.acquaintances: set[NodeId] = set()

    def broadcast(self, payload: Message, tag: ProtocolTag = ProtocolTag.BEB,
                  visited: tuple[NodeId, ...] = (), self_deliver: bool = True,
                  sender: Optional[NodeId] = None) -> SignedEnvelope:
        node = self.node
        self.seq += 1
        env = SignedEnvelope(node.id if sender is None else sender, self.seq, tag, payload, b"", visited)
        env = replace(env, signature=node.auth.sign(node.key, env.signed_bytes))
        node.transmit(env, layer_of(payload))
        if self_deliver and tag is ProtocolTag.BEB:
            node.sim.call_at(node.sim.now, node.id, lambda: node.dispatch(payload, node.id, "beb"))
        return env

    def deliver(self, env: SignedEnvelope) -> bool:
        """Authenticate and de-duplicate; True when the envelope is accepted."""
        node = self.node
        metrics = node.metrics
        sender = env.sender
        if sender == node.id:
            metrics["beb_dropped_own"] += 1
            return False
        if not getattr(env, "_auth_ok", False):
            if not node.keydir.verify(sender, env.signed_bytes, env.signature):
                metrics["beb_rejected"] += 1
                return False
            object.__setattr__(env, "_auth_ok", True)
        seq = env.seq
        hi = self.highest.get(sender, 0)
        seen = self.seen.setdefault(sender, set())
        if seq in seen or seq <= hi - DEDUP_WINDOW:
            metrics["beb_duplicate"] += 1
            return False
        seen.add(seq)
        if seq > hi:
            self.highest[sender] = seq
            if len(seen) > 2 * DEDUP_WINDOW:
                floor = seq - DEDUP_WINDOW
                self.seen[sender] = {s for s in seen if s > floor}
        if sender not in self.acquaintances:
            self.acquaintances.add(sender)
        metrics["beb_delivered"] += 1
        return True


# --------------------------------------------------------------------------
# reachable reliable broadcast
# --------------------------------------------------------------------------

@dataclass
class RrbState:
    paths: dict[str, set[frozenset]] = field(default_factory=dict)
    delivered: Optional[str] = None
    acked_attempt: int = -1
    forwards: dict[tuple[int, str], list[frozenset]] = field(default_factory=dict)


@dataclass
class Outgoing:
    data: RrbData
    expected: set[NodeId]
    acked: set[NodeId] = field(default_factory=set)
    attempt: int = 0
    timer: Optional[int] = None
    stream: Optional[object] = None
    done: bool = False

    @property
    def missing(self) -> set[NodeId]:
        return self.expected - self.acked


class ReachableReliableBroadcast:
    """Multi-hop broadcast delivering after f+1 node-disjoint paths."""

    def __init__(self, node: "Node", max_forwards: Optional[int] = None,
                 retransmit_ms: float = 1.0, backoff_cap: int = 16) -> None:
        self.node = node
        self.seq = 0
        f = node.budget.f
        self.paths_needed = f + 1
        self.max_forwards = f + 1 if max_forwards is None else max_forwards
        self.retransmit_ms = retransmit_ms
        self.backoff_cap = backoff_cap
        self.kg = KnowledgeGraph()
        self.state: dict[tuple[NodeId, int], RrbState] = {}
        self.outgoing: dict[int, Outgoing] = {}
        self.streams: dict[object, int] = {}
        self.acks_forwarded: set[tuple[NodeId, NodeId, int, int]] = set()

    # ------------------------------------------------------------------ origin side

    def broadcast(self, payload: Message, expected: Optional[Iterable[NodeId]] = None,
                  stream: Optional[object] = None, self_deliver: bool = True) -> int:
        node = self.node
        self.seq += 1
        seq = self.seq
        sig = node.auth.sign(node.key, rrb_signed_bytes(node.id, seq, payload))
        data = RrbData(node.id, seq, payload, sig)
        if expected is None:
            expected = node.default_rrb_targets()
        out = Outgoing(data, set(expected) - {node.id}, stream=stream)
        if stream is not None:
            prev = self.streams.get(stream)
            if prev is not None:
                self._finish(prev)
            self.streams[stream] = seq
        self.outgoing[seq] = out
        node.beb.broadcast(data, ProtocolTag.RRB, (node.id,), self_deliver=False)
        if self_deliver:
            node.sim.call_at(node.sim.now, node.id, lambda: node.dispatch(payload, node.id, "rrb"))
        self._arm(out)
        return seq

    def _arm(self, out: Outgoing) -> None:
        interval = self.retransmit_ms * min(2 ** out.attempt, self.backoff_cap)
        seq = out.data.origin_seq
        out.timer = self.node.sim.set_timer(self.node.id, interval, False,
                                            lambda: self._retransmit(seq))

    def _finish(self, seq: int) -> None:
        out = self.outgoing.get(seq)
        if out is None or out.done:
            return
        out.done = True
        if out.timer is not None:
            self.node.sim.cancel_timer(out.timer)
            out.timer = None

    def _retransmit(self, seq: int) -> None:
        out = self.outgoing.get(seq)
        if out is None or out.done:
            return
        out.timer = None
        if out.expected and not out.missing:
            out.done = True
            return
        out.attempt += 1
        self.node.metrics["rrb_retransmit"] += 1
        data = replace(out.data, attempt=out.attempt, missing=tuple(sorted(out.missing)))
        self.node.beb.broadcast(data, ProtocolTag.RRB, (self.node.id,), self_deliver=False)
        self._arm(out)

    def expect(self, seq: int, nodes: Iterable[NodeId]) -> None:
        """Widen the ack set of an outgoing message (re-arming it if finished)."""
        out = self.outgoing.get(seq)
        if out is None:
            return
        new = set(nodes) - {self.node.id} - out.expected
        if not new:
            return
        out.expected |= new
        if out.done and (self.streams.get(out.stream) == seq or out.stream is None):
            out.done = False
            self._arm(out)

    def pending(self) -> int:
        return sum(1 for o in self.outgoing.values() if not o.done)

    # ------------------------------------------------------------------ receive side

    def on_receive(self, env: SignedEnvelope) -> None:
        node = self.node
        me = node.id
        data = env.payload
        visited = env.visited
        if (not visited or visited[0] != data.origin or visited[-1] != env.sender
                or len(set(visited)) != len(visited)):
            node.metrics["rrb_malformed"] += 1
            return
        if not getattr(data, "_origin_ok", False):
            if not node.keydir.verify(data.origin, rrb_signed_bytes(data.origin, data.origin_seq,
                                                                     data.payload),
                                      data.origin_signature):
                node.metrics["rrb_bad_origin_sig"] += 1
                return
            object.__setattr__(data, "_origin_ok", True)
        self.kg.add_path(visited, me)
        if data.origin == me or me in visited:
            return
        key = (data.origin, data.origin_seq)
        st = self.state.get(key)
        if st is None:
            st = self.state[key] = RrbState()
        d = data.payload.digest
        paths = st.paths.get(d)
        if paths is None:
            paths = st.paths[d] = set()
        inter = frozenset(visited[1:])
        is_new = inter not in paths
        paths.add(inter)

        if st.delivered is None:
            if is_new and has_disjoint_paths(paths, self.paths_needed):
                st.delivered = d
                node.metrics["rrb_delivered"] += 1
                self._ack(data, st)
                node.dispatch(data.payload, data.origin, "rrb")
        elif st.delivered == d and data.attempt > st.acked_attempt:
            self._ack(data, st)

        if not node.may_forward(data):
            return
        fkey = (data.attempt, d)
        done = st.forwards.get(fkey)
        if done is None:
            done = st.forwards[fkey] = []
        if len(done) < self.max_forwards and all(inter.isdisjoint(p) for p in done):
            done.append(inter)
            node.metrics["rrb_forward"] += 1
            node.beb.broadcast(data, ProtocolTag.RRB, visited + (me,), self_deliver=False)

    def _ack(self, data: RrbData, st: RrbState) -> None:
        node = self.node
        st.acked_attempt = data.attempt
        if not node.may_ack(data):
            return
        sig = node.auth.sign(node.key, ack_signed_bytes(node.id, data.origin, data.origin_seq))
        node.beb.broadcast(RrbAck(node.id, data.origin, data.origin_seq, data.attempt, sig),
                           self_deliver=False)

    def on_ack(self, ack: RrbAck) -> None:
        node = self.node
        if not getattr(ack, "_ok", False):
            if not node.keydir.verify(ack.acker, ack_signed_bytes(ack.acker, ack.origin, ack.origin_seq),
                                      ack.signature):
                node.metrics["rrb_bad_ack"] += 1
                return
            object.__setattr__(ack, "_ok", True)
        if ack.origin == node.id:
            out = self.outgoing.get(ack.origin_seq)
            if out is not None:
                out.acked.add(ack.acker)
                if not out.done and out.expected and not out.missing:
                    self._finish(ack.origin_seq)
            return
        # relay acks toward origins that may not hear the acker directly
        key = (ack.acker, ack.origin, ack.origin_seq, ack.attempt)
        if key in self.acks_forwarded or ack.acker == node.id:
            return
        self.acks_forwarded.add(key)
        if self.kg.knows(ack.acker, ack.origin) or not node.may_forward(ack):
            return
        node.metrics["rrb_ack_forward"] += 1
        node.beb.broadcast(ack, self_deliver=False)

    def delivered(self, origin: NodeId, origin_seq: int) -> bool:
        st = self.state.get((origin, origin_seq))
        return st is not None and st.delivered is not None
