"""Byte layout of envelopes and protocol payloads.

Every integer is big-endian.  Variable-length fields are length-prefixed.

Envelope::

    u8   version            (= 1)
    u8   protocol_tag       (ProtocolTag: 0 BEB, 1 RRB, ...)
    u32  sender
    u64  seq
    u16  len(visited), then u32 per visited node
    u32  len(payload), payload bytes
    u16  len(signature), signature bytes

The signature covers everything before the signature field.

Payload::

    u8   message type code (see ``MessageType``), then the type-specific body.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import ClassVar, Optional

from .core import InstanceId, NodeId, ProtocolTag, digest

WIRE_VERSION = 1


class WireError(ValueError):
    pass


class MessageType(IntEnum):
    APP = 0
    HEARTBEAT = 1
    GET_NEIGHBORS = 2
    SET_NEIGHBORS = 3
    KNOWN_SET = 4
    BIN_PHASE = 5
    MV_MSG = 6
    VEC_ROW = 7
    DECISION = 8
    RRB_ACK = 9
    BIN_DECIDED = 10
    RESULT_QUERY = 11
    RRB_DATA = 12


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">H", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">Q", v))
        return self

    def i64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">q", v))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(b)
        return self

    def blob(self, b: bytes) -> "Writer":
        self.u32(len(b))
        self._parts.append(b)
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode())

    def opt_blob(self, b: Optional[bytes]) -> "Writer":
        if b is None:
            return self.u8(0)
        self.u8(1)
        return self.blob(b)

    def opt_i64(self, v: Optional[int]) -> "Writer":
        if v is None:
            return self.u8(0)
        self.u8(1)
        return self.i64(v)

    def ids(self, ids) -> "Writer":
        ids = tuple(ids)
        self.u16(len(ids))
        for i in ids:
            self.u32(i)
        return self

    def instance(self, iid: InstanceId) -> "Writer":
        self.text(iid.label)
        self.u8(int(iid.tag))
        return self.opt_i64(iid.sub_round)

    def message(self, m: "Message") -> "Writer":
        return self.blob(m.encode())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._data):
            raise WireError("truncated input")
        out = bytes(self._data[self._pos:end])
        self._pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        return self.blob().decode()

    def opt_blob(self) -> Optional[bytes]:
        return self.blob() if self.u8() else None

    def opt_i64(self) -> Optional[int]:
        return self.i64() if self.u8() else None

    def ids(self) -> tuple[int, ...]:
        return tuple(self.u32() for _ in range(self.u16()))

    def instance(self) -> InstanceId:
        label = self.text()
        tag = ProtocolTag(self.u8())
        return InstanceId(label, tag, self.opt_i64())

    def message(self) -> "Message":
        return decode_message(self.blob())

    def done(self) -> bool:
        return self._pos == len(self._data)


_REGISTRY: dict[int, type["Message"]] = {}


def register(cls: type["Message"]) -> type["Message"]:
    if cls.TYPE in _REGISTRY:
        raise ValueError(f"duplicate message type {cls.TYPE}")
    _REGISTRY[int(cls.TYPE)] = cls
    return cls


class Message:
    """Base of all payloads.  Subclasses are frozen dataclasses."""

    TYPE: ClassVar[MessageType]

    def write_body(self, w: Writer) -> None:
        raise NotImplementedError

    @classmethod
    def read_body(cls, r: Reader) -> "Message":
        raise NotImplementedError

    @cached_property
    def encoded(self) -> bytes:
        w = Writer().u8(int(self.TYPE))
        self.write_body(w)
        return w.getvalue()

    def encode(self) -> bytes:
        return self.encoded

    @cached_property
    def digest(self) -> str:
        return digest(self.encoded)


def decode_message(data: bytes) -> Message:
    r = Reader(data)
    code = r.u8()
    cls = _REGISTRY.get(code)
    if cls is None:
        raise WireError(f"unknown message type {code}")
    msg = cls.read_body(r)
    if not r.done():
        raise WireError("trailing bytes after message body")
    return msg


@register
@dataclass(frozen=True)
class AppMessage(Message):
    """Opaque application bytes."""

    TYPE: ClassVar[MessageType] = MessageType.APP
    data: bytes

    def write_body(self, w: Writer) -> None:
        w.blob(self.data)

    @classmethod
    def read_body(cls, r: Reader) -> "AppMessage":
        return cls(r.blob())


@dataclass(frozen=True, eq=False)
class SignedEnvelope:
    sender: NodeId
    seq: int
    tag: ProtocolTag
    payload: Message
    signature: bytes = b""
    visited: tuple[NodeId, ...] = ()

    @cached_property
    def signed_bytes(self) -> bytes:
        return signed_bytes(self.sender, self.seq, self.tag, self.visited, self.payload)

    def key(self) -> tuple[int, int]:
        return (self.sender, self.seq)


def signed_bytes(sender: NodeId, seq: int, tag: ProtocolTag, visited, payload: Message) -> bytes:
    w = Writer().u8(WIRE_VERSION).u8(int(tag)).u32(sender).u64(seq).ids(visited)
    w.blob(payload.encode())
    return w.getvalue()


def encode_envelope(env: SignedEnvelope) -> bytes:
    sig = env.signature
    return env.signed_bytes + struct.pack(">H", len(sig)) + sig


def decode_envelope(data: bytes) -> SignedEnvelope:
    r = Reader(data)
    version = r.u8()
    if version != WIRE_VERSION:
        raise WireError(f"unsupported wire version {version}")
    tag = ProtocolTag(r.u8())
    sender = r.u32()
    seq = r.u64()
    visited = r.ids()
    payload = decode_message(r.blob())
    sig = r._take(r.u16())
    if not r.done():
        raise WireError("trailing bytes after envelope")
    return SignedEnvelope(sender, seq, tag, payload, sig, visited)
