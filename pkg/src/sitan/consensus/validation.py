"""Signature and justification checks for consensus messages.

Every check returns ``None`` for a valid message or a short reason string.
Verdicts are memoised on the message object, keyed by the participant set and
``f``, because the simulator hands the same object to every receiver.

Justification members are checked at signature level only (they travel
stripped).  That is enough: each rule counts at least a quorum of distinct
signed members, so at most ``f`` of them can come from Byzantine senders and
the correct remainder carries the guarantee.
"""
from __future__ import annotations

from collections import Counter
from typing import Optional

from ..core import KeyDirectory, quorum
from .messages import (BinDecided, BinPhase, MvMessage, Phase, VecRow, justification_digest,
                       vec_entry_bytes)

MAX_PROPOSAL_BYTES = 64 * 1024

_PREV = {Phase.LOCK: Phase.CONVERGE, Phase.DECIDE: Phase.LOCK, Phase.CONVERGE: Phase.DECIDE}


def _memo(msg, key, compute):
    cache = msg.__dict__.setdefault("_verdicts", {})
    if key not in cache:
        cache[key] = compute()
    return cache[key]


def signature_ok(msg, keydir: KeyDirectory) -> bool:
    """Signature of a signed consensus message (memoised; keys never change in a run)."""
    ok = msg.__dict__.get("_sig_ok")
    if ok is None:
        ok = keydir.verify(msg.sender, msg.header_bytes, msg.signature)
        msg.__dict__["_sig_ok"] = ok
    return ok


def _members_ok(members, keydir, participants, check) -> Optional[str]:
    senders = set()
    for m in members:
        if m.justification:
            return "nested justification"
        if m.sender in senders:
            return "duplicate justification sender"
        if m.sender not in participants:
            return "justification sender outside participants"
        reason = check(m)
        if reason:
            return reason
        if not signature_ok(m, keydir):
            return "bad justification signature"
        senders.add(m.sender)
    return None


# --------------------------------------------------------------------------
# binary
# --------------------------------------------------------------------------

def check_bin_phase(msg: BinPhase, keydir: KeyDirectory, participants: frozenset, f: int) -> Optional[str]:
    return _memo(msg, (participants, f), lambda: _check_bin_phase(msg, keydir, participants, f))


def _check_bin_phase(msg: BinPhase, keydir, participants, f) -> Optional[str]:
    if msg.sender not in participants:
        return "sender outside participants"
    if msg.round < 1:
        return "bad round"
    if msg.phase is Phase.DECIDE:
        if msg.value not in (0, 1, None):
            return "bad value"
    elif msg.value not in (0, 1):
        return "bad value"
    if not signature_ok(msg, keydir):
        return "bad signature"
    if msg.jdigest != justification_digest(msg.justification):
        return "justification digest mismatch"
    just = msg.justification
    if msg.round == 1 and msg.phase is Phase.CONVERGE:
        return None if not just else "round-1 CONVERGE carries a justification"
    q = quorum(len(participants), f)
    if len(just) < q:
        return "justification below quorum"
    prev_phase = _PREV[msg.phase]
    prev_round = msg.round - 1 if msg.phase is Phase.CONVERGE else msg.round

    def member(m):
        if m.instance != msg.instance or m.round != prev_round or m.phase is not prev_phase:
            return "justification member from another step"
        if m.phase is not Phase.DECIDE and m.value not in (0, 1):
            return "bad justification value"
        return None

    reason = _members_ok(just, keydir, participants, member)
    if reason:
        return reason
    counts = Counter(m.value for m in just)
    if msg.phase is Phase.LOCK:
        # majority of CONVERGE values; a tie justifies either bit
        if counts[msg.value] < counts[1 - msg.value]:
            return "LOCK value is not the CONVERGE majority"
    elif msg.phase is Phase.DECIDE:
        held = [v for v in (0, 1) if counts[v] >= q]
        if msg.value is None:
            if held:
                return "⊥ despite a quorum for one value"
        elif msg.value not in held:
            return "DECIDE value lacks a LOCK quorum"
    else:
        seen = {v for v in (0, 1) if counts[v]}
        if len(seen) > 1:
            return "conflicting DECIDE values in justification"
        if seen and msg.value not in seen:
            return "CONVERGE ignores the DECIDE value in its justification"
    return None


def check_bin_decided(msg: BinDecided, keydir: KeyDirectory, participants: frozenset, f: int) -> Optional[str]:
    def compute():
        if msg.value not in (0, 1):
            return "bad value"
        proof = msg.proof
        if len(proof) < quorum(len(participants), f):
            return "proof below quorum"
        rounds = {m.round for m in proof}
        if len(rounds) != 1:
            return "proof spans rounds"

        def member(m):
            if m.instance != msg.instance or m.phase is not Phase.DECIDE or m.value != msg.value:
                return "proof member does not match"
            return None

        return _members_ok(proof, keydir, participants, member)

    return _memo(msg, (participants, f), compute)


# --------------------------------------------------------------------------
# multivalued
# --------------------------------------------------------------------------

def check_mv(msg: MvMessage, keydir: KeyDirectory, participants: frozenset, f: int) -> Optional[str]:
    return _memo(msg, (participants, f), lambda: _check_mv(msg, keydir, participants, f))


def _check_mv(msg: MvMessage, keydir, participants, f) -> Optional[str]:
    if msg.sender not in participants:
        return "sender outside participants"
    if msg.phase not in (0, 1, 2):
        return "bad phase"
    if msg.value is None:
        return "⊥ value"
    if len(msg.value) > MAX_PROPOSAL_BYTES:
        return "value too large"
    if not signature_ok(msg, keydir):
        return "bad signature"
    if msg.jdigest != justification_digest(msg.justification):
        return "justification digest mismatch"
    return justification_reason(msg, keydir, participants, f)


def justification_reason(msg: MvMessage, keydir, participants, f) -> Optional[str]:
    """The per-phase justification rule alone (signature already checked)."""
    just = msg.justification
    if msg.phase == 0:
        return None if not just else "phase-0 message carries a justification"
    q = quorum(len(participants), f)
    want = msg.phase - 1

    def member(m):
        if m.mid != msg.mid or m.phase != want or m.value is None:
            return "justification member from another phase or instance"
        return None

    if msg.phase == 1:
        if len(just) == 1 and just[0].sender == msg.sender:
            # rule (a): kept own proposal
            reason = _members_ok(just, keydir, participants, member)
            if reason:
                return reason
            return None if just[0].value == msg.value else "value differs from own proposal"
        if len(just) < q:
            return "justification below quorum"
        reason = _members_ok(just, keydir, participants, member)
        if reason:
            return reason
        support = sum(1 for m in just if m.value == msg.value)
        return None if support > f else "adopted value lacks f+1 support"
    if len(just) < q:
        return "justification below quorum"
    reason = _members_ok(just, keydir, participants, member)
    if reason:
        return reason
    if any(m.value != msg.value for m in just):
        return "phase-1 quorum does not carry the value"
    return None


# --------------------------------------------------------------------------
# vector
# --------------------------------------------------------------------------

def check_vec_row(msg: VecRow, keydir: KeyDirectory, columns: tuple, f: int) -> tuple[Optional[str], int]:
    """Returns (reason, count of non-⊥ entries)."""
    def compute():
        if msg.columns != columns:
            return ("column set mismatch", 0)
        count = 0
        for node, e in zip(columns, msg.row):
            if e is None:
                continue
            if len(e.value) > MAX_PROPOSAL_BYTES:
                return ("entry too large", 0)
            if not keydir.verify(node, vec_entry_bytes(msg.vid, node, e.value), e.signature):
                return ("bad entry signature", 0)
            count += 1
        return (None, count)

    return _memo(msg, (columns, f), compute)
