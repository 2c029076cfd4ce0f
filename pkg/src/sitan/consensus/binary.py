"""Randomized binary consensus in rounds of CONVERGE, LOCK and DECIDE.

Per round, with q = quorum(n, f):

* CONVERGE: on q CONVERGE messages, take the most common bit (tie: keep own)
  and move to LOCK carrying it.
* LOCK: on q LOCK messages, keep the bit held by q of them, else ⊥, and move
  to DECIDE carrying it.
* DECIDE: q DECIDE messages with the same bit decide it.  Otherwise the
  unique non-⊥ bit among them (justification makes it unique) becomes the
  next CONVERGE value, and with none present the local coin picks it.

Every message carries the quorum it was computed from.  A node that sees a
valid message for a later step adopts it (same value, same justification),
which lets laggards catch up without replaying history.  Decided nodes
broadcast a self-certifying ``BinDecided`` proof instead of further rounds.

Once a CONVERGE or LOCK quorum is in, the node keeps listening for a short
collection window (or until every participant has been heard) before acting.
On a broadcast medium this gives nodes nearly the same view of the step, so
the CONVERGE majority agrees across nodes and LOCK quorums form sooner.  Any
superset of a quorum is a valid justification, so safety is unaffected.
"""
from __future__ import annotations

import logging
from collections import Counter
from typing import TYPE_CHECKING, Callable, Iterable, Optional

from ..core import InstanceId
from .messages import BinDecided, BinPhase, Phase, make_bin_phase
from .validation import check_bin_decided, check_bin_phase

if TYPE_CHECKING:
    from .manager import ConsensusManager

log = logging.getLogger(__name__)

ROUND_WINDOW = 16
COLLECT_WINDOW_MS = 5.0


def converge_step(values: Iterable[int], own: int) -> int:
    c = Counter(values)
    if c[1] > c[0]:
        return 1
    if c[0] > c[1]:
        return 0
    return own


def lock_step(values: Iterable[int], q: int) -> Optional[int]:
    c = Counter(values)
    for v in (0, 1):
        if c[v] >= q:
            return v
    return None


def decide_step(values: Iterable[Optional[int]], q: int) -> tuple[str, Optional[int]]:
    """Outcome of a DECIDE quorum: ("decide", v), ("adopt", v) or ("coin", None)."""
    c = Counter(v for v in values if v is not None)
    for v in (0, 1):
        if c[v] >= q:
            return ("decide", v)
    if len(c) == 1:
        return ("adopt", next(iter(c)))
    if len(c) > 1:
        # unreachable with validated inputs; fall back to the coin
        log.warning("conflicting non-⊥ DECIDE values %s", dict(c))
    return ("coin", None)


class BinaryConsensus:
    kind = "bin"

    def __init__(self, mgr: "ConsensusManager", iid: InstanceId, proposal: int,
                 participants: frozenset, on_done: Callable[[int], None]) -> None:
        if proposal not in (0, 1):
            raise ValueError("binary proposal must be 0 or 1")
        self.mgr = mgr
        self.iid = iid
        self.participants = participants
        self.f = mgr.f
        self.q = mgr.quorum(participants)
        self.proposal = proposal
        self.on_done = on_done
        self.round = 1
        self.phase = Phase.CONVERGE
        self.value: Optional[int] = proposal
        self.store: dict[tuple[int, int], dict[int, BinPhase]] = {}
        self.current = None
        self.decided: Optional[int] = None
        self.decided_round: Optional[int] = None
        self._coin = mgr.coin_rng(iid)
        self.collect_window = COLLECT_WINDOW_MS
        self._window: Optional[tuple[tuple[int, int], float]] = None

    # ------------------------------------------------------------------ driving

    def start(self) -> None:
        self._emit(self.round, self.phase, self.value, ())

    def _emit(self, rnd: int, phase: Phase, value, just) -> None:
        node = self.mgr.node
        self.round, self.phase, self.value = rnd, phase, value
        msg = make_bin_phase(node.auth, node.key, self.iid, rnd, phase, value,
                             sorted(just, key=lambda m: m.sender))
        self.current = msg
        self.mgr.trace("BIN_STEP", instance=str(self.iid), round=rnd, phase=int(phase),
                       value=-1 if value is None else value)
        self._store(msg)
        self.mgr.send(msg, stream=self.iid)

    def _store(self, msg: BinPhase) -> bool:
        bucket = self.store.setdefault(msg.step, {})
        if msg.sender in bucket:
            return False
        bucket[msg.sender] = msg
        return True

    def periodic(self) -> None:
        if self.current is not None:
            self.mgr.send(self.current, stream=self.iid, refresh=True)

    # ------------------------------------------------------------------ receiving

    def on_message(self, msg) -> None:
        if self.decided is not None:
            return
        if isinstance(msg, BinDecided):
            reason = check_bin_decided(msg, self.mgr.keydir, self.participants, self.f)
            if reason:
                self.mgr.reject(msg, reason)
                return
            self._decide(msg.value, msg.proof[0].round, msg.proof)
            return
        reason = check_bin_phase(msg, self.mgr.keydir, self.participants, self.f)
        if reason:
            self.mgr.reject(msg, reason)
            return
        if msg.round > self.round + ROUND_WINDOW:
            self.mgr.node.metrics["bin_future_dropped"] += 1
            return
        if msg.round < self.round - 1 and msg.phase is not Phase.DECIDE:
            self.mgr.node.metrics["bin_stale_dropped"] += 1
            return
        if not self._store(msg):
            return
        if msg.phase is Phase.DECIDE and msg.value is not None:
            bucket = self.store[msg.step]
            same = [m for m in bucket.values() if m.value == msg.value]
            if len(same) >= self.q:
                self._decide(msg.value, msg.round, same)
                return
        if msg.step > (self.round, int(self.phase)):
            # a justified later step: adopt it
            self.mgr.node.metrics["bin_jump"] += 1
            self._emit(msg.round, msg.phase, msg.value, msg.justification)
        self._advance()

    def _advance(self) -> None:
        while self.decided is None:
            bucket = self.store.get((self.round, int(self.phase)), {})
            if len(bucket) < self.q:
                return
            if self.phase is not Phase.DECIDE and self._collecting(len(bucket)):
                return
            msgs = list(bucket.values())
            values = [m.value for m in msgs]
            if self.phase is Phase.CONVERGE:
                self._emit(self.round, Phase.LOCK, converge_step(values, self.value), msgs)
            elif self.phase is Phase.LOCK:
                self._emit(self.round, Phase.DECIDE, lock_step(values, self.q), msgs)
            else:
                outcome, v = decide_step(values, self.q)
                if outcome == "decide":
                    self._decide(v, self.round, [m for m in msgs if m.value == v])
                    return
                if outcome == "coin":
                    v = self._coin.randrange(2)
                    self.mgr.node.metrics["bin_coin"] += 1
                self._emit(self.round + 1, Phase.CONVERGE, v, msgs)

    def _collecting(self, heard: int) -> bool:
        if heard >= len(self.participants) or self.collect_window <= 0:
            return False
        sim = self.mgr.node.sim
        step = (self.round, int(self.phase))
        if self._window is None or self._window[0] != step:
            self._window = (step, sim.now + self.collect_window)
            sim.set_timer(self.mgr.node.id, self.collect_window, False, self._on_window)
        return sim.now < self._window[1]

    def _on_window(self) -> None:
        if self.decided is None:
            self._advance()

    def _decide(self, value: int, rnd: int, proof) -> None:
        self.decided = value
        self.decided_round = rnd
        proof = tuple(sorted((m.stripped for m in proof), key=lambda m: m.sender))
        self.current = BinDecided(self.iid, self.mgr.node.id, value, proof)
        self.mgr.send(self.current, stream=self.iid)
        self.store.clear()
        self.on_done(value)

    @property
    def result(self):
        return self.decided
