"""Byzantine behaviours and network fault injection.

A Byzantine node runs the honest protocol logic locally (so it always has
plausible messages to distort) and its outgoing consensus messages pass
through :meth:`Behavior.on_consensus_send`.  Behaviours can re-sign content
with the node's own key but never hold another node's key, so identity
forgery is limited to envelopes that receivers reject.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

from .consensus.messages import (BinDecided, BinPhase, Decision, MvMessage, Phase, VecRow,
                                 decision_bytes, make_mv_message, sign_vec_entry)
from .comm import layer_of
from .core import NodeId, ProtocolTag
from .netsim import LinkModel, Simulator
from .wire import SignedEnvelope

if TYPE_CHECKING:
    from .consensus.manager import ConsensusManager
    from .node import Network, Node

log = logging.getLogger(__name__)


class BehaviorKind(str, Enum):
    SILENT = "silent"
    RANDOM_VALUES = "random_values"
    WRONG_PHASE = "wrong_phase"
    EQUIVOCATE = "equivocate"
    DROP_FORWARDING = "drop_forwarding"
    MIXED = "mixed"


@dataclass(frozen=True)
class NetworkFaults:
    loss_probability: Optional[float] = None
    duplication_probability: Optional[float] = None
    corruption_probability: Optional[float] = None
    delay_max: Optional[float] = None
    isolated: tuple[NodeId, ...] = ()
    reconnect_at: Optional[float] = None     # ms; isolated nodes rejoin then


@dataclass(frozen=True)
class AdversarySpec:
    byzantine_nodes: tuple[NodeId, ...] = ()
    behavior: BehaviorKind = BehaviorKind.SILENT
    network: Optional[NetworkFaults] = None
    forge_probability: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "behavior", BehaviorKind(self.behavior))
        object.__setattr__(self, "byzantine_nodes", tuple(sorted(set(self.byzantine_nodes))))
        if not 0.0 <= self.forge_probability <= 1.0:
            raise ValueError("forge_probability must be within [0, 1]")

    def check_budget(self, f: int) -> None:
        if len(self.byzantine_nodes) > f:
            raise ValueError(f"{len(self.byzantine_nodes)} Byzantine nodes exceed f={f}")


def pick_byzantine(candidates: Iterable[NodeId], count: int, seed: int) -> tuple[NodeId, ...]:
    pool = sorted(candidates)
    return tuple(sorted(random.Random(f"byzantine/{seed}").sample(pool, min(count, len(pool)))))


# --------------------------------------------------------------------------
# message distortions
# --------------------------------------------------------------------------

def _resign_bin(node: "Node", msg: BinPhase, **changes) -> BinPhase:
    m = replace(msg, signature=b"", **changes)
    return replace(m, signature=node.auth.sign(node.key, m.header_bytes))


def _resign_mv(node: "Node", msg: MvMessage, **changes) -> MvMessage:
    m = replace(msg, signature=b"", **changes)
    return replace(m, signature=node.auth.sign(node.key, m.header_bytes))


def _random_bytes(rng: random.Random, like: Optional[bytes]) -> bytes:
    size = max(1, min(len(like or b"x"), 32))
    return bytes(rng.randrange(256) for _ in range(size))


def random_values(node: "Node", msg, rng: random.Random):
    """Same message with its value fields replaced by seeded-random values."""
    if isinstance(msg, BinPhase):
        choices = (0, 1, None) if msg.phase is Phase.DECIDE else (0, 1)
        return _resign_bin(node, msg, value=rng.choice(choices))
    if isinstance(msg, BinDecided):
        return replace(msg, value=1 - msg.value)
    if isinstance(msg, MvMessage):
        return _resign_mv(node, msg, value=_random_bytes(rng, msg.value))
    if isinstance(msg, VecRow):
        row = list(msg.row)
        k = msg.columns.index(node.id)
        row[k] = sign_vec_entry(node.auth, node.key, msg.vid, _random_bytes(rng, b"v"))
        others = [i for i, e in enumerate(row) if e is not None and i != k]
        if others and rng.random() < 0.5:
            i = rng.choice(others)
            row[i] = replace(row[i], value=_random_bytes(rng, row[i].value))
        return replace(msg, row=tuple(row))
    if isinstance(msg, Decision):
        value = b"\x02" + _random_bytes(rng, msg.value)
        return Decision(msg.instance, value, node.id,
                        node.auth.sign(node.key, decision_bytes(msg.instance, value)))
    return msg


def wrong_phase(node: "Node", msg, rng: random.Random):
    """Same message with its phase or round perturbed."""
    if isinstance(msg, BinPhase):
        if rng.random() < 0.5:
            return _resign_bin(node, msg, phase=Phase((int(msg.phase) + rng.choice((1, 2))) % 3),
                               value=msg.value if msg.value is not None else rng.randrange(2))
        return _resign_bin(node, msg, round=max(1, msg.round + rng.choice((-1, 1, 2))))
    if isinstance(msg, MvMessage):
        return _resign_mv(node, msg, phase=(msg.phase + rng.choice((1, 2))) % 3)
    if isinstance(msg, VecRow):
        row = list(msg.row)
        k = msg.columns.index(node.id)
        j = (k + 1) % len(row)
        row[j], row[k] = row[k], row[j]
        return replace(msg, row=tuple(row))
    return msg


def conflicting_variant(node: "Node", msg, rng: random.Random):
    """A second, locally well-formed version of ``msg`` carrying another value."""
    if isinstance(msg, BinPhase):
        if msg.value is None:
            return _resign_bin(node, msg, value=rng.randrange(2))
        return _resign_bin(node, msg, value=1 - msg.value)
    if isinstance(msg, MvMessage):
        other = (msg.value or b"") + b"\x00equivocation"
        if msg.phase == 1:
            # a valid "kept own proposal" claim for a value we never sent honestly
            seed = make_mv_message(node.auth, node.key, msg.mid, 0, other)
            return make_mv_message(node.auth, node.key, msg.mid, 1, other, (seed,))
        return _resign_mv(node, msg, value=other)
    if isinstance(msg, VecRow):
        row = list(msg.row)
        k = msg.columns.index(node.id)
        own = row[k].value if row[k] is not None else b""
        row[k] = sign_vec_entry(node.auth, node.key, msg.vid, own + b"\x00equivocation")
        return replace(msg, row=tuple(row))
    return random_values(node, msg, rng)


# --------------------------------------------------------------------------
# behaviours
# --------------------------------------------------------------------------

class Behavior:
    kind: BehaviorKind

    def __init__(self, node: "Node", spec: AdversarySpec, network: "Network") -> None:
        self.node = node
        self.spec = spec
        self.network = network
        self.rng = random.Random(f"adversary/{network.seed}/{node.id}/{self.kind.value}")

    # hooks used by Node / RRB
    def allow_transmit(self, node: "Node", env: SignedEnvelope) -> bool:
        return True

    def allow_forward(self, node: "Node", msg) -> bool:
        return True

    def allow_ack(self, node: "Node", data) -> bool:
        return True

    # consensus output
    def on_consensus_send(self, mgr: "ConsensusManager", msg, stream, refresh: bool) -> None:
        out = self.corrupt_outgoing(msg)
        for m in out:
            self._inject(mgr, m, stream, refresh)

    def corrupt_outgoing(self, msg) -> list:
        return [msg]

    def _inject(self, mgr: "ConsensusManager", msg, stream, refresh: bool) -> None:
        node = self.node
        if isinstance(msg, tuple):          # ("split", a, b): per-target substitution
            _, a, b = msg
            self._record(mgr, a)
            self._record(mgr, b)
            self.network.adversary_router.equivocate(node, a, b, mgr, stream)
            return
        self._record(mgr, msg)
        mgr.transmit(msg, stream, refresh)
        if self.spec.forge_probability and self.rng.random() < self.spec.forge_probability:
            self.forge_identity(msg)

    def _record(self, mgr: "ConsensusManager", msg) -> None:
        node = self.node
        node.metrics["adv_injected"] += 1
        if isinstance(msg, MvMessage) and node.tracer is not None:
            node.tracer.keep_message(msg)
            node.trace("ADV_INJECT", digest=msg.ident, mid=str(msg.mid), phase=msg.phase,
                       behavior=self.kind.value)

    def forge_identity(self, msg) -> None:
        """Broadcast ``msg`` under another node's id, signed with our own key."""
        others = sorted(self.network.ids - {self.node.id})
        if not others:
            return
        victim = self.rng.choice(others)
        self.node.metrics["adv_forged"] += 1
        self.node.beb.broadcast(msg, sender=victim, self_deliver=False)


class Silent(Behavior):
    kind = BehaviorKind.SILENT

    def allow_transmit(self, node, env) -> bool:
        return False

    def allow_forward(self, node, msg) -> bool:
        return False

    def allow_ack(self, node, data) -> bool:
        return False

    def on_consensus_send(self, mgr, msg, stream, refresh) -> None:
        return


class RandomValues(Behavior):
    kind = BehaviorKind.RANDOM_VALUES

    def corrupt_outgoing(self, msg) -> list:
        return [random_values(self.node, msg, self.rng)]


class WrongPhase(Behavior):
    kind = BehaviorKind.WRONG_PHASE

    def corrupt_outgoing(self, msg) -> list:
        return [wrong_phase(self.node, msg, self.rng)]


class Equivocate(Behavior):
    kind = BehaviorKind.EQUIVOCATE

    def corrupt_outgoing(self, msg) -> list:
        if isinstance(msg, (BinPhase, MvMessage, VecRow)):
            return [("split", msg, conflicting_variant(self.node, msg, self.rng))]
        return [msg]


class DropForwarding(Behavior):
    kind = BehaviorKind.DROP_FORWARDING

    def allow_forward(self, node, msg) -> bool:
        return False


class Mixed(Behavior):
    kind = BehaviorKind.MIXED

    def corrupt_outgoing(self, msg) -> list:
        pick = self.rng.randrange(5)
        if pick == 0:
            return []
        if pick == 1:
            return [random_values(self.node, msg, self.rng)]
        if pick == 2:
            return [wrong_phase(self.node, msg, self.rng)]
        if pick == 3 and isinstance(msg, (BinPhase, MvMessage, VecRow)):
            return [("split", msg, conflicting_variant(self.node, msg, self.rng))]
        return [msg]

    def allow_forward(self, node, msg) -> bool:
        return self.rng.random() < 0.5


BEHAVIORS = {cls.kind: cls for cls in (Silent, RandomValues, WrongPhase, Equivocate,
                                        DropForwarding, Mixed)}


# --------------------------------------------------------------------------
# per-target substitution inside the simulator
# --------------------------------------------------------------------------

class AdversaryRouter:
    """Simulator hook delivering a different envelope to a subset of receivers."""

    def __init__(self, sim: Simulator) -> None:
        self.routes: dict[int, tuple[SignedEnvelope, frozenset]] = {}
        sim.substitute = self

    def __call__(self, src: NodeId, dst: NodeId, env):
        route = self.routes.get(id(env))
        if route is None:
            return env
        alt, targets = route
        return alt if dst in targets else env

    def equivocate(self, node: "Node", a, b, mgr: "ConsensusManager", stream) -> None:
        """Send ``a`` to half the receivers and ``b`` to the other half."""
        others = sorted(node.network.ids - {node.id})
        half = frozenset(others[1::2])
        if mgr.transport != "beb":
            mgr.transmit(a, stream)
            mgr.transmit(b, (stream, "alt"))
            return
        beb = node.beb
        beb.seq += 1
        env_a = _signed(node, beb.seq, a)
        env_b = _signed(node, beb.seq, b)
        self.routes[id(env_a)] = (env_b, half)
        node.metrics["adv_equivocations"] += 1
        node.transmit(env_a, layer_of(a))
        self.routes.pop(id(env_a), None)


def _signed(node: "Node", seq: int, payload) -> SignedEnvelope:
    env = SignedEnvelope(node.id, seq, ProtocolTag.BEB, payload)
    return replace(env, signature=node.auth.sign(node.key, env.signed_bytes))


# --------------------------------------------------------------------------
# installation
# --------------------------------------------------------------------------

def install(network: "Network", spec: AdversarySpec) -> dict[NodeId, Behavior]:
    """Attach behaviours to each listed Byzantine node and apply network faults."""
    spec.check_budget(network.budget.f)
    if not hasattr(network, "adversary_router"):
        network.adversary_router = AdversaryRouter(network.sim)
    installed = {}
    for b in spec.byzantine_nodes:
        node = network[b]
        node.adversary = BEHAVIORS[spec.behavior](node, spec, network)
        installed[b] = node.adversary
    if spec.network is not None:
        perturb_network(network.sim, spec.network)
    return installed


def perturb_network(sim: Simulator, faults: NetworkFaults) -> LinkModel:
    """Apply global link overrides and optional node isolation; returns the new link model."""
    changes = {}
    for name in ("loss_probability", "duplication_probability", "corruption_probability",
                 "delay_max"):
        v = getattr(faults, name)
        if v is not None:
            changes[name] = v
    if "delay_max" in changes:
        changes["delay_max"] = max(changes["delay_max"], sim.link.delay_min)
    sim.link = replace(sim.link, **changes)
    if faults.isolated:
        cut = replace(sim.link, loss_probability=1.0)
        pairs = [(a, b) for a in faults.isolated for b in range(sim.n) if a != b]
        for a, b in pairs:
            sim.link_overrides[(a, b)] = cut
            sim.link_overrides[(b, a)] = cut
        if faults.reconnect_at is not None:
            def heal():
                for a, b in pairs:
                    sim.link_overrides.pop((a, b), None)
                    sim.link_overrides.pop((b, a), None)
            sim.call_at(faults.reconnect_at, -1, heal)
    return sim.link
