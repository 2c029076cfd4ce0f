"""Offline re-check of safety properties from a run trace.

Nothing here calls the protocol state machines or their validators.  Keys are
regenerated from the seed in the trace metadata, justification rules are
re-implemented from their definitions, and every verdict is derived from
PROPOSE / DECIDE / MV_* / SINK records alone.
"""
from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx

from ..consensus.messages import MvMessage, decode_row, encode_value, vec_entry_bytes
from ..core import InstanceId, ProtocolTag, SimAuthenticator
from .trace import Trace

BOT_DIGEST = hashlib.blake2b(encode_value(None), digest_size=8).hexdigest()

PROPERTIES = ("agreement", "validity", "structure", "justification", "sink")


@dataclass
class AuditReport:
    violations: list[tuple[str, str]] = field(default_factory=list)   # (property, detail)
    stats: Counter = field(default_factory=Counter)

    def fail(self, prop: str, detail: str) -> None:
        self.violations.append((prop, detail))

    @property
    def ok(self) -> bool:
        return not self.violations

    def verdicts(self) -> dict[str, bool]:
        bad = {p for p, _ in self.violations}
        return {p: p not in bad for p in PROPERTIES}


def _digest(raw: bytes) -> str:
    return hashlib.blake2b(raw, digest_size=8).hexdigest()


class _Keys:
    def __init__(self, n: int, seed: int) -> None:
        self.auth = SimAuthenticator()
        self.public = {i: self.auth.generate(i, seed).public_key for i in range(n)}

    def verify(self, node: int, payload: bytes, sig: bytes) -> bool:
        pk = self.public.get(node)
        return pk is not None and self.auth.verify(pk, payload, sig)


def _ident(m: MvMessage) -> bytes:
    return hashlib.blake2b(m.header_bytes + m.signature, digest_size=16).digest()


def mv_violation(msg: MvMessage, participants: frozenset, f: int, keys: _Keys) -> Optional[str]:
    """Why ``msg`` could not have been produced by the MV rules, or None."""
    size = len(participants)
    if msg.sender not in participants:
        return "sender not a participant"
    if msg.phase not in (0, 1, 2) or msg.value is None:
        return "malformed phase or value"
    if not keys.verify(msg.sender, msg.header_bytes, msg.signature):
        return "signature"
    h = hashlib.blake2b(digest_size=16)
    for m in msg.justification:
        h.update(_ident(m))
    if h.digest() != msg.jdigest:
        return "justification digest"
    J = msg.justification
    seen = set()
    for m in J:
        if m.justification or m.mid != msg.mid or m.phase != msg.phase - 1 or m.value is None:
            return "justification member shape"
        if m.sender in seen or m.sender not in participants:
            return "justification member sender"
        if not keys.verify(m.sender, m.header_bytes, m.signature):
            return "justification member signature"
        seen.add(m.sender)
    if msg.phase == 0:
        return "phase 0 with justification" if J else None
    big = 2 * len(J) > size + f
    if msg.phase == 1:
        if len(J) == 1 and J[0].sender == msg.sender:
            return None if J[0].value == msg.value else "phase 1 differs from own proposal"
        if not big:
            return "phase 1 justification too small"
        if sum(m.value == msg.value for m in J) <= f:
            return "phase 1 value without f+1 support"
        return None
    if not big:
        return "phase 2 justification too small"
    if any(m.value != msg.value for m in J):
        return "phase 2 quorum disagrees"
    return None


def _participants_at(trace: Trace) -> dict[int, list[tuple[float, Optional[frozenset]]]]:
    views: dict[int, list] = defaultdict(list)
    for r in trace.of_kind("SINK", "SINK_UNAVAILABLE"):
        views[r.node].append((r.time, frozenset(r.data["members"]) if r.kind == "SINK" else None))
    return views


def audit_trace(trace: Trace) -> AuditReport:
    meta = trace.meta
    n, f, seed = int(meta["n"]), int(meta["f"]), int(meta["seed"])
    byz = set(meta.get("byzantine", ()))
    faulty = byz | set(meta.get("crashed", ()))
    correct = set(range(n)) - faulty
    all_nodes = bool(meta.get("all_nodes"))
    keys = _Keys(n, seed)
    rep = AuditReport()

    proposals: dict[str, dict[int, tuple]] = defaultdict(dict)
    decisions: dict[str, dict[int, tuple]] = defaultdict(dict)
    protocol_of: dict[str, str] = {}
    for r in trace.records:
        if r.kind == "PROPOSE":
            proposals[r.data["instance"]][r.node] = (r.data["value"], r.data.get("raw"))
            protocol_of[r.data["instance"]] = r.data["protocol"]
        elif r.kind == "DECIDE" and r.node in correct:
            inst = r.data["instance"]
            protocol_of[inst] = r.data["protocol"]
            prev = decisions[inst].get(r.node)
            if prev is not None and prev[0] != r.data["value"]:
                rep.fail("agreement", f"node {r.node} decided {inst} twice")
            decisions[inst][r.node] = (r.data["value"], r.data.get("raw"))

    # byzantine phase-0 values seen on the wire, for the MVC2/MVC3 distinction
    byz_values: dict[str, set] = defaultdict(set)
    for r in trace.of_kind("ADV_INJECT", "MV_ACCEPT"):
        m = trace.messages.get(r.data["digest"])
        if m is not None and m.sender in byz and m.phase == 0:
            byz_values[str(m.mid)].add(_digest(encode_value(m.value)))

    for inst, decided in sorted(decisions.items()):
        proto = protocol_of.get(inst, "?")
        values = {v for v, _ in decided.values()}
        rep.stats["instances_checked"] += 1
        if len(values) > 1:
            rep.fail("agreement", f"{proto} {inst}: correct nodes decided {sorted(values)}")
        props = {node: p for node, p in proposals.get(inst, {}).items() if node in correct}
        prop_values = {v for v, _ in props.values()}
        if proto in ("BIN", "MV") and len(prop_values) == 1:
            (v,) = prop_values
            for node, (d, _) in decided.items():
                if d != v:
                    rep.fail("validity", f"{proto} {inst}: unanimous {v} but node {node} decided {d}")
        if proto == "BIN":
            allowed = {_digest(encode_value(0)), _digest(encode_value(1))}
            for node, (d, _) in decided.items():
                if d not in allowed:
                    rep.fail("validity", f"BIN {inst}: node {node} decided a non-bit")
        elif proto == "MV":
            for node, (d, _) in decided.items():
                if d == BOT_DIGEST or d in prop_values:
                    continue
                if d in byz_values.get(inst, ()) or d in {v for b, (v, _) in proposals.get(inst, {}).items() if b in byz}:
                    rep.fail("validity", f"MV {inst}: node {node} decided a Byzantine-only value")
                else:
                    rep.fail("validity", f"MV {inst}: node {node} decided a never-proposed value")
        elif proto == "VEC":
            for node, (d, raw) in decided.items():
                _check_vector(rep, inst, node, raw, f, correct, props, keys)

    # results learnt by dissemination must match the sink's decision
    for r in trace.of_kind("DECISION_ACCEPT"):
        if r.node not in correct:
            continue
        decided = {v for v, _ in decisions.get(r.data["instance"], {}).values()}
        if decided and r.data["value"] not in decided:
            rep.fail("agreement", f"node {r.node} accepted a foreign result for {r.data['instance']}")
        rep.stats["results_accepted"] += 1

    _check_justifications(rep, trace, f, correct, byz, keys, all_nodes, n)
    _check_sinks(rep, trace, f, correct)
    return rep


def _check_vector(rep, inst, node, raw, f, correct, props, keys) -> None:
    if raw is None:
        rep.fail("structure", f"VEC {inst}: node {node} decision not logged")
        return
    try:
        columns, row = decode_row(bytes.fromhex(raw))
    except ValueError:
        rep.fail("structure", f"VEC {inst}: undecodable vector")
        return
    entries = [(c, e) for c, e in zip(columns, row) if e is not None]
    if len(entries) != 2 * f + 1:
        rep.fail("structure", f"VEC {inst}: {len(entries)} entries, expected {2 * f + 1}")
    vid = _vid_from_str(inst)
    good = 0
    for col, e in entries:
        if not keys.verify(col, vec_entry_bytes(vid, col, e.value), e.signature):
            rep.fail("structure", f"VEC {inst}: bad signature at column {col}")
        if col in correct:
            good += 1
            proposed = props.get(col)
            if proposed is not None and proposed[1] != encode_value(e.value).hex():
                rep.fail("structure", f"VEC {inst}: column {col} differs from its proposal")
    if good < f + 1:
        rep.fail("structure", f"VEC {inst}: only {good} correct columns")


def _vid_from_str(text: str):
    label, _, rest = text.rpartition(":")
    tag, _, sub = rest.partition("/")
    return InstanceId(label, ProtocolTag[tag], int(sub) if sub else None)


def _check_justifications(rep, trace, f, correct, byz, keys, all_nodes, n) -> None:
    views = _participants_at(trace)
    everyone = frozenset(range(n))
    verdict: dict[tuple, Optional[str]] = {}

    def participants(node: int, time: float) -> Optional[frozenset]:
        if all_nodes:
            return everyone
        current = None
        for t, members in views.get(node, ()):
            if t > time:
                break
            current = members
        return current

    def check(m: MvMessage, parts: frozenset) -> Optional[str]:
        key = (_ident(m), parts)
        if key not in verdict:
            verdict[key] = mv_violation(m, parts, f, keys)
        return verdict[key]

    accepted_by_correct = set()
    for r in trace.of_kind("MV_ACCEPT"):
        if r.node not in correct:
            continue
        m = trace.messages.get(r.data["digest"])
        rep.stats["mv_accepted"] += 1
        parts = participants(r.node, r.time)
        if m is None or parts is None:
            rep.fail("justification", f"node {r.node} accepted an unlogged MV message")
            continue
        accepted_by_correct.add(r.data["digest"])
        why = check(m, parts)
        if why:
            rep.stats["mv_invalid_accepted"] += 1
            rep.fail("justification", f"node {r.node} accepted invalid MV message ({why})")
    for r in trace.of_kind("ADV_INJECT"):
        m = trace.messages.get(r.data["digest"])
        if m is None:
            continue
        rep.stats["injected"] += 1
        parts = participants(r.node, r.time) or everyone
        if r.data.get("behavior") == "random_values" and check(m, parts):
            rep.stats["injected_unjustifiable"] += 1
            if r.data["digest"] in accepted_by_correct:
                rep.fail("justification", f"unjustifiable injection {r.data['digest']} accepted")
            else:
                rep.stats["injected_unjustifiable_rejected"] += 1


def _check_sinks(rep, trace, f, correct) -> None:
    meta = trace.meta
    final: dict[int, Optional[frozenset]] = {}
    for r in trace.of_kind("SINK", "SINK_UNAVAILABLE"):
        if r.node in correct:
            final[r.node] = frozenset(r.data["members"]) if r.kind == "SINK" else None
    if not final:
        return
    views = set(final.values())
    if len(views) > 1:
        rep.fail("sink", f"correct nodes hold {len(views)} different sink views")
    adjacency = meta.get("adjacency")
    graph = None
    if adjacency is not None:
        graph = nx.Graph()
        graph.add_nodes_from(range(len(adjacency)))
        graph.add_edges_from((a, b) for a, nbrs in enumerate(adjacency) for b in nbrs
                             if a in adjacency[b])
    for view in views:
        if view is None:
            rep.stats["sink_unavailable"] += 1
            if graph is not None:
                # Byzantine nodes can withhold heartbeats, so only correct cliques count
                best = max((len(c) for c in nx.find_cliques(graph.subgraph(correct))), default=0)
                if best >= 3 * f + 1:
                    rep.stats["sink_missed_clique"] += 1
            continue
        if len(view) < 3 * f + 1:
            rep.fail("sink", f"sink of {len(view)} below 3f+1")
        if graph is not None and not meta.get("mobile"):
            missing = [(a, b) for a in view for b in view if a < b and not graph.has_edge(a, b)]
            if missing:
                rep.fail("sink", f"sink is not a clique of the radio graph ({missing[:3]} ...)")
