"""Multivalued consensus on opaque byte strings, reduced to binary consensus.

Phase 0 exchanges proposals.  On a quorum of them a node adopts the most
common value when more than ``f`` messages carry it (ties go to the smallest
value), then announces its value in phase 1.  On a quorum of phase-1
messages it proposes 1 to the embedded binary consensus if a quorum of them
agree on one value, else 0.  A binary result of 1 decides that value, waiting
for a justified phase-2 message when the node did not see the quorum itself;
0 decides ⊥.

Catch-up paths used by nodes that fell behind:

* phase-0 members of a phase-1 justification are complete, valid phase-0
  messages and are added to ``M`` directly;
* a valid phase-2 message proves a phase-1 quorum for its value, so a node
  still before the binary step may take that value and propose 1.
"""
from __future__ import annotations

from collections import Counter
from typing import TYPE_CHECKING, Callable, Optional

from ..core import InstanceId, ProtocolTag
from .messages import MvMessage, make_mv_message
from .validation import MAX_PROPOSAL_BYTES, check_mv

if TYPE_CHECKING:
    from .manager import ConsensusManager


PHASE1_GRACE_MS = 50.0


def majority_value(values) -> tuple[bytes, int]:
    """Most common value and its count; ties break to the smallest value."""
    c = Counter(values)
    best = min(c.items(), key=lambda kv: (-kv[1], kv[0]))
    return best


def binary_child(mid: InstanceId) -> InstanceId:
    return InstanceId(f"{mid.label}/mv", ProtocolTag.BIN, mid.sub_round)


class MultivaluedConsensus:
    kind = "mv"

    def __init__(self, mgr: "ConsensusManager", mid: InstanceId, proposal: bytes,
                 participants: frozenset, on_done: Callable[[Optional[bytes]], None]) -> None:
        proposal = bytes(proposal)
        if len(proposal) > MAX_PROPOSAL_BYTES:
            raise ValueError(f"proposal exceeds {MAX_PROPOSAL_BYTES} bytes")
        self.mgr = mgr
        self.mid = mid
        self.participants = participants
        self.f = mgr.f
        self.q = mgr.quorum(participants)
        self.on_done = on_done
        self.phase = 0
        self.v: Optional[bytes] = proposal
        self.M: dict[int, dict[int, MvMessage]] = {0: {}, 1: {}, 2: {}}
        self.own: dict[int, MvMessage] = {}
        self.j2: tuple = ()
        self.propose: Optional[int] = None
        self.bin_started = False
        self.rounds: Optional[int] = None
        self.hold_until: Optional[float] = None
        self.result: Optional[int] = None
        self.waiting = False
        self.done = False
        self.decided: Optional[bytes] = None
        self.current: Optional[MvMessage] = None

    # ------------------------------------------------------------------ T1

    def start(self) -> None:
        self._send(0, self.v, ())

    def _send(self, phase: int, value: bytes, just) -> None:
        node = self.mgr.node
        msg = make_mv_message(node.auth, node.key, self.mid, phase, value,
                              sorted(just, key=lambda m: m.sender))
        self.own[phase] = msg
        self.current = msg
        self.mgr.trace_mv(msg, "MV_SEND")
        self._accept(msg)
        self.mgr.send(msg, stream=(self.mid, phase))

    def periodic(self) -> None:
        if self.current is not None:
            self.mgr.send(self.current, stream=(self.mid, self.current.phase), refresh=True)

    # ------------------------------------------------------------------ T2

    def _accept(self, msg: MvMessage) -> bool:
        bucket = self.M[msg.phase]
        if msg.sender in bucket:
            return False
        bucket[msg.sender] = msg
        return True

    def on_message(self, msg: MvMessage) -> None:
        reason = check_mv(msg, self.mgr.keydir, self.participants, self.f)
        if reason:
            self.mgr.reject(msg, reason)
            self.mgr.trace_mv(msg, "MV_REJECT", reason=reason)
            return
        if self._accept(msg):
            self.mgr.trace_mv(msg, "MV_ACCEPT")
        if msg.phase == 1:
            for m in msg.justification:
                # phase-0 members need nothing beyond their signature
                if check_mv(m, self.mgr.keydir, self.participants, self.f) is None and self._accept(m):
                    self.mgr.trace_mv(m, "MV_ACCEPT")
        self._progress(msg)

    # ------------------------------------------------------------------ T3

    def _progress(self, latest: Optional[MvMessage] = None) -> None:
        if self.done:
            return
        if self.phase == 0 and len(self.M[0]) >= self.q:
            msgs = list(self.M[0].values())
            maj, count = majority_value(m.value for m in msgs)
            if count > self.f:
                self.v = maj
                just = msgs
            else:
                just = [self.own[0]]
            self.phase = 1
            self._send(1, self.v, just)
        if self.phase == 1 and not self.bin_started:
            if len(self.M[1]) >= self.q:
                msgs = list(self.M[1].values())
                maj, count = majority_value(m.value for m in msgs)
                if count >= self.q:
                    self.v = maj
                    self.j2 = tuple(m for m in msgs if m.value == maj)
                    self.propose = 1
                    self._start_binary()
                elif not self._hold_phase1(len(msgs) - count):
                    self.v = None
                    self.propose = 0
                    self._start_binary()
            elif latest is not None and latest.phase == 2:
                self._take_phase2(latest)
                self.propose = 1
                self._start_binary()
        elif self.phase == 0 and latest is not None and latest.phase == 2 and not self.bin_started:
            self.phase = 1
            self._take_phase2(latest)
            self.propose = 1
            self._start_binary()
        if self.waiting and self.result == 1:
            self._try_finish_waiting(latest)

    def _hold_phase1(self, dissent: int) -> bool:
        """Keep waiting while the leading value is contradicted by at most f messages.

        Those could all be Byzantine, so the value may still be unanimous among
        correct nodes; proposing 0 now would let f early messages force ⊥.
        The wait is bounded so a split among correct nodes cannot stall us.
        """
        if dissent > self.f:
            return False
        sim = self.mgr.node.sim
        if self.hold_until is None:
            self.hold_until = sim.now + PHASE1_GRACE_MS
            sim.set_timer(self.mgr.node.id, PHASE1_GRACE_MS, False, self._progress)
            self.mgr.node.metrics["mv_phase1_hold"] += 1
        return sim.now < self.hold_until

    def _take_phase2(self, msg: MvMessage) -> None:
        self.v = msg.value
        self.j2 = msg.justification
        self.mgr.node.metrics["mv_phase2_catchup"] += 1

    def _start_binary(self) -> None:
        self.bin_started = True
        self.mgr.start_child_binary(self, binary_child(self.mid), self.propose, self._on_binary)

    def _on_binary(self, result: int) -> None:
        self.result = result
        if result == 1:
            if self.v is None:
                self.waiting = True
                self._try_finish_waiting(None)
                return
            self._send(2, self.v, self.j2)
            self._finish(self.v)
        else:
            self.v = None
            self._finish(None)

    def _try_finish_waiting(self, latest: Optional[MvMessage]) -> None:
        if self.done:
            return
        candidate = None
        if latest is not None and latest.phase == 2:
            candidate = latest
        elif self.M[2]:
            candidate = next(iter(self.M[2].values()))
        if candidate is not None:
            self.waiting = False
            self.v = candidate.value
            self.j2 = candidate.justification
            self._send(2, self.v, self.j2)
            self._finish(self.v)
            return
        msgs = list(self.M[1].values())
        if msgs:
            maj, count = majority_value(m.value for m in msgs)
            if count >= self.q:
                self.waiting = False
                self.v = maj
                self.j2 = tuple(m for m in msgs if m.value == maj)
                self._send(2, self.v, self.j2)
                self._finish(self.v)

    def _finish(self, value: Optional[bytes]) -> None:
        self.phase = 2
        self.done = True
        self.decided = value
        self.on_done(value)
