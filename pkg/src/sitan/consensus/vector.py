"""Vector consensus: agree on one row of 2f+1 signed proposals.

Columns are the sorted participant ids.  Each node builds its own row from
the proposals it hears (capped at 2f+1 entries) and stores any foreign row
that carries exactly 2f+1 valid entries.  Once some row is full, round ``r``
proposes the first full row found scanning from column ``r mod n`` to the
multivalued instance ``(vid, r)``; the first non-⊥ outcome is the decision.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Optional

from ..core import InstanceId, ProtocolTag
from .messages import Row, VecEntry, VecRow, decode_row, encode_row, sign_vec_entry
from .validation import MAX_PROPOSAL_BYTES, check_vec_row

if TYPE_CHECKING:
    from .manager import ConsensusManager


def mv_child(vid: InstanceId, r: int) -> InstanceId:
    return InstanceId(f"{vid.label}/vec", ProtocolTag.MV, r)


def row_count(row: Row) -> int:
    return sum(1 for e in row if e is not None)


class VectorConsensus:
    kind = "vec"

    def __init__(self, mgr: "ConsensusManager", vid: InstanceId, proposal: bytes,
                 participants: frozenset, on_done: Callable[[tuple], None]) -> None:
        proposal = bytes(proposal)
        if len(proposal) > MAX_PROPOSAL_BYTES:
            raise ValueError(f"proposal exceeds {MAX_PROPOSAL_BYTES} bytes")
        self.mgr = mgr
        self.vid = vid
        self.participants = participants
        self.f = mgr.f
        self.target = 2 * self.f + 1
        self.columns = tuple(sorted(participants))
        self.index = {node: k for k, node in enumerate(self.columns)}
        self.me = mgr.node.id
        self.on_done = on_done
        self.r = 0
        self.array: dict[int, Row] = {}
        own: list[Optional[VecEntry]] = [None] * len(self.columns)
        own[self.index[self.me]] = sign_vec_entry(mgr.node.auth, mgr.node.key, vid, proposal)
        self.own = own
        self.running = False
        self.done = False
        self.decided: Optional[bytes] = None
        self.current: Optional[VecRow] = None

    # ------------------------------------------------------------------ T1

    def start(self) -> None:
        self._broadcast_row()
        self._maybe_select()

    def _broadcast_row(self) -> None:
        self.current = VecRow(self.vid, self.me, self.columns, tuple(self.own))
        self.mgr.send(self.current, stream=self.vid)

    def periodic(self) -> None:
        if self.current is not None:
            self.mgr.send(self.current, stream=self.vid, refresh=True)

    # ------------------------------------------------------------------ T2

    def on_message(self, msg: VecRow, sender: int) -> None:
        if msg.sender != sender or sender not in self.index:
            self.mgr.reject(msg, "row sender mismatch")
            return
        reason, count = check_vec_row(msg, self.mgr.keydir, self.columns, self.f)
        if not reason and count > self.target:
            reason = "row exceeds 2f+1 entries"
        if reason:
            self.mgr.reject(msg, reason)
            return
        if count == self.target and sender != self.me:
            self.array[sender] = msg.row
        k = self.index[sender]
        mine = msg.row[k]
        if mine is not None and self.own[k] is None and row_count(self.own) < self.target:
            self.own[k] = mine
            self._broadcast_row()
        self._maybe_select()

    # ------------------------------------------------------------------ T3

    def _row(self, col: int) -> Optional[Row]:
        node = self.columns[col]
        if node == self.me:
            return tuple(self.own)
        return self.array.get(node)

    def _maybe_select(self) -> None:
        if self.running or self.done:
            return
        n = len(self.columns)
        for index in range(n):
            j = (self.r + index) % n
            row = self._row(j)
            if row is not None and row_count(row) == self.target:
                break
        else:
            return
        self.running = True
        value = encode_row(self.columns, row)
        self.mgr.trace("VEC_ROUND", instance=str(self.vid), round=self.r, row=self.columns[j])
        self.mgr.start_child_mv(self, mv_child(self.vid, self.r), value, self._on_mv)

    def _on_mv(self, result: Optional[bytes]) -> None:
        self.running = False
        if result is not None:
            try:
                cols, row = decode_row(result)
            except ValueError:
                cols, row = (), ()
            if cols == self.columns and row_count(row) == self.target:
                self.done = True
                self.decided = result
                self.on_done(result)
                return
            self.mgr.node.metrics["vec_bad_mv_result"] += 1
        self.r += 1
        self._maybe_select()

    @property
    def rounds(self) -> int:
        return self.r + 1
