"""Consensus payloads and their canonical encodings.

Justification sets travel *stripped*: each member keeps its signed header
(including the digest of its own justification) but not the member messages
themselves.  A member's signature therefore still verifies, while the wire
size stays linear in the quorum size.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from enum import IntEnum
from functools import cached_property
from typing import ClassVar, Optional

from ..core import InstanceId, KeyPair, NodeId, digest
from ..wire import Message, MessageType, Reader, Writer, register

BOT = None          # the undecided value
WIRE_BOT = 2        # binary ⊥ on the wire


class Phase(IntEnum):
    CONVERGE = 0
    LOCK = 1
    DECIDE = 2


def justification_digest(members) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for m in members:
        h.update(m.ident_bytes)
    return h.digest()


class _Signed(Message):
    """Mixin for messages signed by ``sender`` over ``header_bytes``."""

    signature: bytes

    @property
    def header_bytes(self) -> bytes:
        raise NotImplementedError

    @cached_property
    def ident_bytes(self) -> bytes:
        return hashlib.blake2b(self.header_bytes + self.signature, digest_size=16).digest()

    @cached_property
    def ident(self) -> str:
        return self.ident_bytes.hex()


# --------------------------------------------------------------------------
# binary
# --------------------------------------------------------------------------

@register
@dataclass(frozen=True)
class BinPhase(_Signed):
    TYPE: ClassVar[MessageType] = MessageType.BIN_PHASE
    instance: InstanceId
    sender: NodeId
    round: int
    phase: Phase
    value: Optional[int]
    jdigest: bytes
    signature: bytes
    justification: tuple["BinPhase", ...] = ()

    @cached_property
    def header_bytes(self) -> bytes:
        w = Writer().raw(b"BIN").instance(self.instance).u32(self.sender)
        w.u32(self.round).u8(int(self.phase)).u8(WIRE_BOT if self.value is None else self.value)
        return w.blob(self.jdigest).getvalue()

    def write_body(self, w: Writer) -> None:
        w.blob(self.header_bytes).blob(self.signature)
        w.u16(len(self.justification))
        for m in self.justification:
            w.message(m)

    @classmethod
    def read_body(cls, r: Reader) -> "BinPhase":
        h = Reader(r.blob())
        if h._take(3) != b"BIN":
            raise ValueError("bad BIN header")
        iid, sender, rnd, ph, val = h.instance(), h.u32(), h.u32(), Phase(h.u8()), h.u8()
        jd = h.blob()
        sig = r.blob()
        just = tuple(r.message() for _ in range(r.u16()))
        return cls(iid, sender, rnd, ph, None if val == WIRE_BOT else val, jd, sig, just)

    @cached_property
    def stripped(self) -> "BinPhase":
        return self if not self.justification else replace(self, justification=())

    @property
    def step(self) -> tuple[int, int]:
        return (self.round, int(self.phase))


def make_bin_phase(auth, key: KeyPair, instance: InstanceId, rnd: int, phase: Phase,
                   value: Optional[int], justification=()) -> BinPhase:
    just = tuple(m.stripped for m in justification)
    jd = justification_digest(just)
    m = BinPhase(instance, key.node, rnd, phase, value, jd, b"", just)
    return replace(m, signature=auth.sign(key, m.header_bytes))


@register
@dataclass(frozen=True)
class BinDecided(Message):
    """Self-certifying decision: a quorum of DECIDE messages for one value."""

    TYPE: ClassVar[MessageType] = MessageType.BIN_DECIDED
    instance: InstanceId
    sender: NodeId
    value: int
    proof: tuple[BinPhase, ...]

    def write_body(self, w: Writer) -> None:
        w.instance(self.instance).u32(self.sender).u8(self.value).u16(len(self.proof))
        for m in self.proof:
            w.message(m)

    @classmethod
    def read_body(cls, r: Reader) -> "BinDecided":
        iid, sender, val = r.instance(), r.u32(), r.u8()
        return cls(iid, sender, val, tuple(r.message() for _ in range(r.u16())))


# --------------------------------------------------------------------------
# multivalued
# --------------------------------------------------------------------------

@register
@dataclass(frozen=True)
class MvMessage(_Signed):
    TYPE: ClassVar[MessageType] = MessageType.MV_MSG
    mid: InstanceId
    sender: NodeId
    phase: int
    value: Optional[bytes]
    jdigest: bytes
    signature: bytes
    justification: tuple["MvMessage", ...] = ()

    @cached_property
    def header_bytes(self) -> bytes:
        w = Writer().raw(b"MVC").instance(self.mid).u32(self.sender).u8(self.phase)
        return w.opt_blob(self.value).blob(self.jdigest).getvalue()

    def write_body(self, w: Writer) -> None:
        w.blob(self.header_bytes).blob(self.signature)
        w.u16(len(self.justification))
        for m in self.justification:
            w.message(m)

    @classmethod
    def read_body(cls, r: Reader) -> "MvMessage":
        h = Reader(r.blob())
        if h._take(3) != b"MVC":
            raise ValueError("bad MV header")
        mid, sender, ph, val, jd = h.instance(), h.u32(), h.u8(), h.opt_blob(), h.blob()
        sig = r.blob()
        just = tuple(r.message() for _ in range(r.u16()))
        return cls(mid, sender, ph, val, jd, sig, just)

    @cached_property
    def stripped(self) -> "MvMessage":
        return self if not self.justification else replace(self, justification=())


def make_mv_message(auth, key: KeyPair, mid: InstanceId, phase: int, value: Optional[bytes],
                    justification=()) -> MvMessage:
    just = tuple(m.stripped for m in justification)
    jd = justification_digest(just)
    m = MvMessage(mid, key.node, phase, value, jd, b"", just)
    return replace(m, signature=auth.sign(key, m.header_bytes))


# --------------------------------------------------------------------------
# vector
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VecEntry:
    value: bytes
    signature: bytes


def vec_entry_bytes(vid: InstanceId, node: NodeId, value: bytes) -> bytes:
    return Writer().raw(b"VEC").instance(vid).u32(node).blob(value).getvalue()


def sign_vec_entry(auth, key: KeyPair, vid: InstanceId, value: bytes) -> VecEntry:
    return VecEntry(value, auth.sign(key, vec_entry_bytes(vid, key.node, value)))


Row = tuple[Optional[VecEntry], ...]


def encode_row(columns: tuple[NodeId, ...], row: Row) -> bytes:
    """Canonical, column-ordered vector encoding (byte equality = vector equality)."""
    w = Writer().u16(len(columns))
    for node, e in zip(columns, row):
        w.u32(node)
        if e is None:
            w.u8(0)
        else:
            w.u8(1).blob(e.value).blob(e.signature)
    return w.getvalue()


def decode_row(data: bytes) -> tuple[tuple[NodeId, ...], Row]:
    r = Reader(data)
    cols, row = [], []
    for _ in range(r.u16()):
        cols.append(r.u32())
        row.append(VecEntry(r.blob(), r.blob()) if r.u8() else None)
    if not r.done():
        raise ValueError("trailing bytes in vector encoding")
    return tuple(cols), tuple(row)


@register
@dataclass(frozen=True)
class VecRow(Message):
    TYPE: ClassVar[MessageType] = MessageType.VEC_ROW
    vid: InstanceId
    sender: NodeId
    columns: tuple[NodeId, ...]
    row: Row

    def write_body(self, w: Writer) -> None:
        w.instance(self.vid).u32(self.sender).blob(encode_row(self.columns, self.row))

    @classmethod
    def read_body(cls, r: Reader) -> "VecRow":
        vid, sender = r.instance(), r.u32()
        cols, row = decode_row(r.blob())
        return cls(vid, sender, cols, row)


# --------------------------------------------------------------------------
# result dissemination
# --------------------------------------------------------------------------

def decision_bytes(instance: InstanceId, value: bytes) -> bytes:
    return Writer().raw(b"DEC").instance(instance).blob(value).getvalue()


@register
@dataclass(frozen=True)
class Decision(Message):
    TYPE: ClassVar[MessageType] = MessageType.DECISION
    instance: InstanceId
    value: bytes
    signer: NodeId
    signature: bytes

    def write_body(self, w: Writer) -> None:
        w.instance(self.instance).blob(self.value).u32(self.signer).blob(self.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "Decision":
        return cls(r.instance(), r.blob(), r.u32(), r.blob())


@register
@dataclass(frozen=True)
class ResultQuery(Message):
    TYPE: ClassVar[MessageType] = MessageType.RESULT_QUERY
    instance: InstanceId
    requester: NodeId

    def write_body(self, w: Writer) -> None:
        w.instance(self.instance).u32(self.requester)

    @classmethod
    def read_body(cls, r: Reader) -> "ResultQuery":
        return cls(r.instance(), r.u32())


# --------------------------------------------------------------------------
# value codecs shared by decision logs and dissemination
# --------------------------------------------------------------------------

def encode_value(value) -> bytes:
    """Tagged encoding for decided values: bit, bytes/⊥, or vector bytes."""
    if value is None:
        return b"\x00"
    if isinstance(value, bool) or isinstance(value, int):
        return b"\x01" + bytes([int(value)])
    return b"\x02" + bytes(value)


def decode_value(data: bytes):
    tag = data[:1]
    if tag == b"\x00":
        return None
    if tag == b"\x01":
        return data[1]
    return data[1:]


def value_digest(value) -> str:
    return digest(encode_value(value))
