"""Identities, signatures, quorum arithmetic and per-instance bookkeeping."""
from __future__ import annotations

import hashlib
import hmac
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Optional, Protocol

NodeId = int


class ConfigurationError(ValueError):
    """Raised for parameter combinations the protocols cannot tolerate."""


def digest(data: bytes, size: int = 8) -> str:
    return hashlib.blake2b(data, digest_size=size).hexdigest()


# --------------------------------------------------------------------------
# keys and signatures
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    node: NodeId
    public_key: bytes
    private_key: bytes = field(repr=False)


class Authenticator(Protocol):
    def generate(self, node: NodeId, seed: int) -> KeyPair: ...

    def sign(self, key: KeyPair, payload: bytes) -> bytes: ...

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool: ...


class SimAuthenticator:
    """Deterministic keyed authenticator for simulation.

    Keys are derived from ``(seed, node)`` so a run can be re-audited offline.
    Verification needs the signer's secret, which only this object holds;
    protocol code and adversaries see public keys only, so signatures remain
    unforgeable inside the simulator.
    """

    SIG_SIZE = 32

    def __init__(self) -> None:
        self._secrets: dict[bytes, bytes] = {}

    def generate(self, node: NodeId, seed: int) -> KeyPair:
        material = f"sitan-key/{seed}/{node}".encode()
        private = hashlib.blake2b(material, digest_size=32).digest()
        public = hashlib.blake2b(private, digest_size=32, person=b"sitan-pub").digest()
        self._secrets[public] = private
        return KeyPair(node, public, private)

    def sign(self, key: KeyPair, payload: bytes) -> bytes:
        return hashlib.blake2b(payload, key=key.private_key, digest_size=self.SIG_SIZE).digest()

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        secret = self._secrets.get(public_key)
        if secret is None or len(signature) != self.SIG_SIZE:
            return False
        expected = hashlib.blake2b(payload, key=secret, digest_size=self.SIG_SIZE).digest()
        return hmac.compare_digest(expected, signature)


class Ed25519Authenticator:
    """Real asymmetric signatures (slower; optional plug-in)."""

    def generate(self, node: NodeId, seed: int) -> KeyPair:
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        raw = hashlib.sha256(f"sitan-ed25519/{seed}/{node}".encode()).digest()
        sk = Ed25519PrivateKey.from_private_bytes(raw)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(node, pk, raw)

    def sign(self, key: KeyPair, payload: bytes) -> bytes:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        return Ed25519PrivateKey.from_private_bytes(key.private_key).sign(payload)

    def verify(self, public_key: bytes, payload: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, payload)
        except (InvalidSignature, ValueError):
            return False
        return True


DEFAULT_AUTHENTICATOR = SimAuthenticator()


def generate_keypair(node: NodeId, seed: int = 0) -> KeyPair:
    return DEFAULT_AUTHENTICATOR.generate(node, seed)


def sign(key: KeyPair, payload: bytes) -> bytes:
    return DEFAULT_AUTHENTICATOR.sign(key, payload)


def verify(public_key: bytes, payload: bytes, signature: bytes) -> bool:
    return DEFAULT_AUTHENTICATOR.verify(public_key, payload, signature)


class KeyDirectory:
    """Global public-key directory (stands in for certificate validation)."""

    def __init__(self, authenticator: Authenticator | None = None) -> None:
        self.auth = authenticator or SimAuthenticator()
        self._public: dict[NodeId, bytes] = {}

    def register(self, key: KeyPair) -> None:
        self._public[key.node] = key.public_key

    def create(self, node: NodeId, seed: int) -> KeyPair:
        key = self.auth.generate(node, seed)
        self.register(key)
        return key

    def public_key(self, node: NodeId) -> bytes | None:
        return self._public.get(node)

    def __contains__(self, node: NodeId) -> bool:
        return node in self._public

    def verify(self, node: NodeId, payload: bytes, signature: bytes) -> bool:
        pk = self._public.get(node)
        if pk is None:
            return False
        return self.auth.verify(pk, payload, signature)


# --------------------------------------------------------------------------
# fault budget
# --------------------------------------------------------------------------

def quorum(n: int, f: int) -> int:
    """Smallest integer strictly greater than (n + f) / 2."""
    if f < 0 or n < 3 * f + 1:
        raise ConfigurationError(f"n={n} cannot tolerate f={f} (need n >= 3f+1)")
    return (n + f) // 2 + 1


def max_faults(n: int) -> int:
    return (n - 1) // 3


@dataclass(frozen=True)
class FaultBudget:
    n: int
    f: int

    def __post_init__(self) -> None:
        quorum(self.n, self.f)

    @property
    def quorum(self) -> int:
        return quorum(self.n, self.f)

    @property
    def k_min(self) -> int:
        return self.quorum

    @property
    def k_max(self) -> int:
        return self.n - self.f

    @classmethod
    def maximal(cls, n: int) -> "FaultBudget":
        return cls(n, max_faults(n))


def quorum_properties(n: int, f: int) -> dict[str, bool]:
    """Arithmetic facts the protocols rely on, for a single (n, f)."""
    q = quorum(n, f)
    return {
        "intersection": 2 * q - n >= f + 1,
        "correct_in_quorum": q - f >= f + 1,
        "k_bounds": (n + f) / 2 < q <= n - f,
        "k_min_le_k_max": q <= n - f,
        "strictly_above_half": q > (n + f) / 2 and not (q - 1 > (n + f) / 2),
    }


# --------------------------------------------------------------------------
# protocol instances
# --------------------------------------------------------------------------

class ProtocolTag(IntEnum):
    BEB = 0
    RRB = 1
    BIN = 2
    MV = 3
    VEC = 4


@dataclass(frozen=True, order=True)
class InstanceId:
    label: str
    tag: ProtocolTag
    sub_round: Optional[int] = None

    def child(self, tag: ProtocolTag, sub_round: Optional[int] = None) -> "InstanceId":
        """Id of a nested instance (vector round r -> multivalued (vid, r))."""
        return InstanceId(self.label, tag, self.sub_round if sub_round is None else sub_round)

    def __str__(self) -> str:
        tail = "" if self.sub_round is None else f"/{self.sub_round}"
        return f"{self.label}:{self.tag.name}{tail}"


class DuplicateInstanceError(KeyError):
    pass


@dataclass
class InstanceContext:
    id: InstanceId
    messages: list = field(default_factory=list)
    state: Any = None


class InstanceRegistry:
    """Per-node table of active protocol instances; each gets its own store."""

    def __init__(self) -> None:
        self._active: dict[InstanceId, InstanceContext] = {}

    def register(self, iid: InstanceId) -> InstanceContext:
        if iid in self._active:
            raise DuplicateInstanceError(str(iid))
        ctx = InstanceContext(iid)
        self._active[iid] = ctx
        return ctx

    def get(self, iid: InstanceId) -> InstanceContext | None:
        return self._active.get(iid)

    def __contains__(self, iid: InstanceId) -> bool:
        return iid in self._active

    def __len__(self) -> int:
        return len(self._active)

    def release(self, iid: InstanceId) -> None:
        self._active.pop(iid, None)


class ResultCacheConflict(RuntimeError):
    pass


@dataclass(frozen=True)
class CachedResult:
    value: Any
    decided_at: float


class ResultCache:
    """Write-once store of decided values, with optional age-based eviction."""

    def __init__(self, horizon_ms: float = math.inf) -> None:
        self.horizon_ms = horizon_ms
        self._entries: dict[InstanceId, CachedResult] = {}

    def put(self, iid: InstanceId, value: Any, now: float) -> bool:
        """Store a decision; returns False when it was already present."""
        old = self._entries.get(iid)
        if old is not None:
            if old.value != value:
                raise ResultCacheConflict(f"{iid}: {old.value!r} != {value!r}")
            return False
        self._entries[iid] = CachedResult(value, now)
        return True

    def get(self, iid: InstanceId) -> CachedResult | None:
        return self._entries.get(iid)

    def __contains__(self, iid: InstanceId) -> bool:
        return iid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def collect(self, now: float) -> int:
        if math.isinf(self.horizon_ms):
            return 0
        stale = [k for k, e in self._entries.items() if now - e.decided_at > self.horizon_ms]
        for k in stale:
            del self._entries[k]
        return len(stale)

    def items(self):
        return self._entries.items()


Callback = Callable[..., None]
