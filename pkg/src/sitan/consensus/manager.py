"""Per-node front end for the consensus services.

Owns instance bookkeeping, message routing, the consensus-layer timer (T1),
transport selection and result dissemination to nodes outside the sink.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Optional, Union

from ..core import (ConfigurationError, DuplicateInstanceError, InstanceId, ProtocolTag, quorum)
from .binary import BinaryConsensus
from .messages import (BinDecided, BinPhase, Decision, MvMessage, ResultQuery, VecRow,
                       decision_bytes, encode_value, decode_value, value_digest)
from .multivalued import MultivaluedConsensus
from .vector import VectorConsensus

if TYPE_CHECKING:
    from ..node import Node

log = logging.getLogger(__name__)

CONSENSUS_TICK_MS = 10.0
BUFFER_LIMIT = 1024          # buffered messages per not-yet-started instance
BUFFERED_INSTANCES = 256
LINGER_TICKS = 100           # T1 keeps re-sending a decided instance this long


class SinkUnavailable(RuntimeError):
    """Raised when consensus is requested but the node has no usable sink."""


class NotInSink(RuntimeError):
    pass


@dataclass
class ConsensusHandle:
    """Non-blocking view of one local consensus execution."""

    instance: InstanceId
    kind: str
    node: int
    started_at: float
    done: bool = False
    result: Any = None
    decided_at: Optional[float] = None
    rounds: Optional[int] = None
    _callbacks: list = field(default_factory=list, repr=False)
    _sim: Any = field(default=None, repr=False)

    def add_done_callback(self, cb: Callable[["ConsensusHandle"], None]) -> None:
        if self.done:
            cb(self)
        else:
            self._callbacks.append(cb)

    def poll(self) -> bool:
        return self.done

    @property
    def latency(self) -> Optional[float]:
        return None if self.decided_at is None else self.decided_at - self.started_at

    def wait(self, timeout: Optional[float] = None):
        """Drive the simulator until this instance decides (blocking form)."""
        budget = math.inf if timeout is None else timeout
        if not self._sim.run_until(lambda: self.done, budget):
            raise TimeoutError(f"{self.instance} undecided after {timeout} ms")
        return self.result

    def _complete(self, result, now: float, rounds: Optional[int]) -> None:
        self.done = True
        self.result = result
        self.decided_at = now
        self.rounds = rounds
        for cb in self._callbacks:
            cb(self)
        self._callbacks.clear()


Label = Union[str, InstanceId]


class ConsensusManager:
    def __init__(self, node: "Node", transport: str = "beb", tick_ms: float = CONSENSUS_TICK_MS,
                 all_nodes: bool = False, disseminate: bool = True) -> None:
        if transport not in ("beb", "rrb"):
            raise ValueError(f"unknown consensus transport {transport!r}")
        self.node = node
        self.keydir = node.keydir
        self.f = node.budget.f
        self.transport = transport
        self.tick_ms = tick_ms
        self.all_nodes = all_nodes
        self.disseminate = disseminate
        self.instances: dict[InstanceId, Any] = {}
        self.handles: dict[InstanceId, ConsensusHandle] = {}
        self.parents: dict[InstanceId, Any] = {}
        self.finished_at_tick: dict[InstanceId, int] = {}
        self.buffer: dict[InstanceId, list] = {}
        self._timer: Optional[int] = None
        self._tick_no = 0
        # dissemination
        self.decision_msgs: dict[InstanceId, dict[int, Decision]] = {}
        self.accepted: dict[InstanceId, Any] = {}
        self.accept_callbacks: dict[InstanceId, list] = {}

    # ------------------------------------------------------------------ context

    def participants(self) -> frozenset:
        if self.all_nodes:
            return self.node.all_node_ids()
        sink = self.node.sink
        if sink is None:
            raise SinkUnavailable(f"node {self.node.id} has no sink view")
        return sink.members

    def quorum(self, participants: frozenset) -> int:
        return quorum(len(participants), self.f)

    def coin_rng(self, iid: InstanceId) -> random.Random:
        return random.Random(f"coin/{self.node.seed}/{self.node.id}/{iid}")

    def trace(self, kind: str, **data) -> None:
        self.node.trace(kind, **data)

    def trace_mv(self, msg: MvMessage, kind: str, **extra) -> None:
        tracer = self.node.tracer
        if tracer is None:
            return
        tracer.keep_message(msg)
        self.node.trace(kind, digest=msg.ident, mid=str(msg.mid), sender=msg.sender,
                        phase=msg.phase, **extra)

    def reject(self, msg, reason: str) -> None:
        self.node.metrics["consensus_rejected"] += 1
        log.debug("node %s rejects %s: %s", self.node.id, type(msg).__name__, reason)

    # ------------------------------------------------------------------ public API

    def bin_propose(self, label: Label, value: int, *, blocking: bool = False,
                    timeout: Optional[float] = None, callback=None):
        return self._propose(label, ProtocolTag.BIN, value, blocking, timeout, callback)

    def mv_propose(self, label: Label, proposal: bytes, *, blocking: bool = False,
                   timeout: Optional[float] = None, callback=None):
        return self._propose(label, ProtocolTag.MV, proposal, blocking, timeout, callback)

    def vec_propose(self, label: Label, proposal: bytes, *, blocking: bool = False,
                    timeout: Optional[float] = None, callback=None):
        return self._propose(label, ProtocolTag.VEC, proposal, blocking, timeout, callback)

    def handle(self, iid: InstanceId) -> Optional[ConsensusHandle]:
        return self.handles.get(iid)

    def _propose(self, label: Label, tag: ProtocolTag, value, blocking, timeout, callback):
        iid = label if isinstance(label, InstanceId) else InstanceId(label, tag)
        if iid.tag is not tag:
            raise ValueError(f"instance {iid} is not a {tag.name} instance")
        participants = self.participants()
        if self.node.id not in participants:
            raise NotInSink(f"node {self.node.id} is not a sink member")
        try:
            quorum(len(participants), self.f)
        except ConfigurationError as exc:
            raise SinkUnavailable(str(exc)) from exc
        handle = self._create(iid, tag, value, participants, parent=None)
        if callback is not None:
            handle.add_done_callback(callback)
        if blocking:
            return handle.wait(timeout)
        return handle

    def start_child_binary(self, parent, iid: InstanceId, value: int, cb) -> None:
        h = self._create(iid, ProtocolTag.BIN, value, parent.participants, parent=parent)

        def done(h: ConsensusHandle) -> None:
            parent.rounds = h.rounds
            cb(h.result)
        h.add_done_callback(done)

    def start_child_mv(self, parent, iid: InstanceId, value: bytes, cb) -> None:
        h = self._create(iid, ProtocolTag.MV, value, parent.participants, parent=parent)
        h.add_done_callback(lambda h: cb(h.result))

    def _create(self, iid: InstanceId, tag: ProtocolTag, value, participants, parent) -> ConsensusHandle:
        if iid in self.instances:
            raise DuplicateInstanceError(str(iid))
        self.node.registry.register(iid)
        now = self.node.sim.now
        handle = ConsensusHandle(iid, tag.name, self.node.id, now, _sim=self.node.sim)
        self.handles[iid] = handle

        def done(result):
            inst = self.instances[iid]
            rounds = getattr(inst, "decided_round", None) or getattr(inst, "rounds", None)
            self.finished_at_tick[iid] = self._tick_no
            self.node.metrics[f"decided_{tag.name.lower()}"] += 1
            extra = {"raw": result.hex()} if tag is ProtocolTag.VEC else {}
            self.trace("DECIDE", instance=str(iid), protocol=tag.name, value=value_digest(result),
                       rounds=rounds, latency=self.node.sim.now - now, top=parent is None, **extra)
            if parent is None:
                self._on_top_decision(iid, result)
            handle._complete(result, self.node.sim.now, rounds)

        cls = {ProtocolTag.BIN: BinaryConsensus, ProtocolTag.MV: MultivaluedConsensus,
               ProtocolTag.VEC: VectorConsensus}[tag]
        inst = cls(self, iid, value, participants, done)
        self.instances[iid] = inst
        if parent is not None:
            self.parents[iid] = parent
        self.trace("PROPOSE", instance=str(iid), protocol=tag.name, value=value_digest(value),
                   raw=encode_value(value).hex() if tag is not ProtocolTag.BIN else str(value),
                   top=parent is None)
        inst.start()
        for msg, sender in self.buffer.pop(iid, ()):
            self._deliver(inst, msg, sender)
        self._ensure_timer()
        return handle

    # ------------------------------------------------------------------ transport

    def send(self, msg, stream=None, refresh: bool = False) -> None:
        adv = self.node.adversary
        if adv is not None:
            adv.on_consensus_send(self, msg, stream, refresh)
        else:
            self.transmit(msg, stream, refresh)

    def transmit(self, msg, stream=None, refresh: bool = False) -> None:
        node = self.node
        if refresh:
            node.metrics["consensus_refresh"] += 1
        if self.transport == "beb":
            node.beb.broadcast(msg, self_deliver=False)
            return
        if refresh:
            return   # RRB retransmits on its own until acknowledged
        targets = self.participants() - {node.id} if not isinstance(msg, Decision) else None
        node.rrb.broadcast(msg, expected=targets, stream=stream, self_deliver=False)

    def _ensure_timer(self) -> None:
        if self._timer is None and self.transport == "beb":
            self._timer = self.node.sim.set_timer(self.node.id, self.tick_ms, True, self._tick)

    def _tick(self) -> None:
        self._tick_no += 1
        active = 0
        for iid, inst in self.instances.items():
            fin = self.finished_at_tick.get(iid)
            if fin is not None and self._tick_no - fin > LINGER_TICKS:
                continue
            active += 1
            inst.periodic()
        if active == 0 and self._timer is not None:
            self.node.sim.cancel_timer(self._timer)
            self._timer = None

    # ------------------------------------------------------------------ receiving

    def on_message(self, payload, sender: int, via: str) -> None:
        if isinstance(payload, (Decision, ResultQuery)):
            self._on_dissemination(payload, sender)
            return
        if isinstance(payload, (BinPhase, BinDecided)):
            iid = payload.instance
        elif isinstance(payload, MvMessage):
            iid = payload.mid
        elif isinstance(payload, VecRow):
            iid = payload.vid
        else:
            return
        inst = self.instances.get(iid)
        if inst is None:
            if iid in self.accepted:
                return
            buf = self.buffer.get(iid)
            if buf is None:
                if len(self.buffer) >= BUFFERED_INSTANCES:
                    self.node.metrics["consensus_buffer_overflow"] += 1
                    return
                buf = self.buffer[iid] = []
            if len(buf) < BUFFER_LIMIT:
                buf.append((payload, sender))
            return
        self._deliver(inst, payload, sender)

    def _deliver(self, inst, msg, sender: int) -> None:
        if isinstance(inst, VectorConsensus):
            if isinstance(msg, VecRow):
                inst.on_message(msg, sender)
        elif isinstance(inst, MultivaluedConsensus):
            if isinstance(msg, MvMessage):
                inst.on_message(msg)
        elif isinstance(msg, (BinPhase, BinDecided)):
            inst.on_message(msg)

    # ------------------------------------------------------------------ dissemination

    def _on_top_decision(self, iid: InstanceId, result) -> None:
        node = self.node
        node.results.put(iid, result, node.sim.now)
        self.accepted[iid] = result
        if not self.disseminate:
            return
        data = encode_value(result)
        sig = node.auth.sign(node.key, decision_bytes(iid, data))
        msg = Decision(iid, data, node.id, sig)
        self.decision_msgs.setdefault(iid, {})[node.id] = msg
        outside = node.all_node_ids() - self.participants()
        if outside:
            node.rrb.broadcast(msg, expected=outside, self_deliver=False)

    def query_result(self, iid: InstanceId, callback=None) -> None:
        """Ask peers for a decided value (recovery path)."""
        if callback is not None:
            if iid in self.accepted:
                callback(self.accepted[iid])
                return
            self.accept_callbacks.setdefault(iid, []).append(callback)
        self.node.beb.broadcast(ResultQuery(iid, self.node.id), self_deliver=False)

    def _on_dissemination(self, msg, sender: int) -> None:
        node = self.node
        if isinstance(msg, ResultQuery):
            held = self.decision_msgs.get(msg.instance)
            if held and msg.requester != node.id:
                for d in sorted(held.values(), key=lambda d: d.signer):
                    node.beb.broadcast(d, self_deliver=False)
            return
        sink = node.sink.members if node.sink is not None else node.all_node_ids()
        if msg.signer not in sink:
            node.metrics["decision_rejected"] += 1
            return
        if not node.keydir.verify(msg.signer, decision_bytes(msg.instance, msg.value), msg.signature):
            node.metrics["decision_rejected"] += 1
            return
        held = self.decision_msgs.setdefault(msg.instance, {})
        if msg.signer in held:
            return
        held[msg.signer] = msg
        if msg.instance in self.accepted:
            return
        matching = [d for d in held.values() if d.value == msg.value]
        if len(matching) >= self.f + 1:
            value = decode_value(msg.value)
            self.accepted[msg.instance] = value
            node.results.put(msg.instance, value, node.sim.now)
            self.trace("DECISION_ACCEPT", instance=str(msg.instance), value=value_digest(value),
                       signers=sorted(d.signer for d in matching))
            for cb in self.accept_callbacks.pop(msg.instance, ()):
                cb(value)
