"""Programmable protocol stack: per-link message profiles and wire codecs.

A stack profile fixes how a message envelope is framed on a link (text JSON
or binary length-prefixed), the delivery reliability mode, and the payload
size bound. Profiles are negotiated per link from each side's ordered
preference list; the initiator's preference wins among the common subset.

Binary frame layout (all integers big-endian):

    u32 body_length
    body:
        u64 msg_id
        u16 src_length,  src bytes (utf-8, "kind#instance")
        u16 dst_length,  dst bytes (agent id or topic name)
        u8  kind        (ordinal in MessageKind declaration order)
        u8  has_correlation, u64 correlation_id (0 when absent)
        u64 sim_time
        u32 payload_length, payload bytes
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .core import AgentId, MasdnError, Message, MessageKind, PayloadTooLarge


class NoCommonProfile(MasdnError):
    """The two offered profile lists share no profile."""


class MalformedFrame(MasdnError):
    """Bytes on the wire do not form a complete, well-formed frame."""


class Codec(Enum):
    TEXT_STRUCTURED = "text-structured"
    BINARY_LENGTH_PREFIXED = "binary-length-prefixed"


class Reliability(Enum):
    AT_MOST_ONCE = "at-most-once"
    AT_LEAST_ONCE = "at-least-once"


@dataclass(frozen=True)
class StackProfile:
    profile_id: str
    codec: Codec
    reliability: Reliability
    max_payload: int

    def __post_init__(self) -> None:
        if self.max_payload <= 0:
            raise ValueError(f"max_payload must be > 0, got {self.max_payload}")


DEFAULT_PROFILES = (
    StackProfile("bin-alo-64k", Codec.BINARY_LENGTH_PREFIXED, Reliability.AT_LEAST_ONCE, 65536),
    StackProfile("bin-amo-64k", Codec.BINARY_LENGTH_PREFIXED, Reliability.AT_MOST_ONCE, 65536),
    StackProfile("txt-alo-64k", Codec.TEXT_STRUCTURED, Reliability.AT_LEAST_ONCE, 65536),
    StackProfile("txt-amo-64k", Codec.TEXT_STRUCTURED, Reliability.AT_MOST_ONCE, 65536),
)


def negotiate(
    offered_a: Sequence[StackProfile], offered_b: Sequence[StackProfile]
) -> StackProfile:
    """Pick the profile both sides support, preferring the initiator's order.

    Side a is the connection initiator by convention, so among the common
    profiles the one ranked highest in a's list wins.
    """
    if not offered_a or not offered_b:
        raise ValueError("both offer lists must be non-empty")
    supported_by_b = set(offered_b)
    for profile in offered_a:
        if profile in supported_by_b:
            return profile
    raise NoCommonProfile(
        f"no common profile between {[p.profile_id for p in offered_a]} "
        f"and {[p.profile_id for p in offered_b]}"
    )


_KIND_ORDINAL = {kind: i for i, kind in enumerate(MessageKind)}
_ORDINAL_KIND = {i: kind for kind, i in _KIND_ORDINAL.items()}

_U64_MAX = 2**64 - 1


def _dst_text(dst: AgentId | str) -> str:
    return str(dst)


def _parse_dst(text: str) -> AgentId | str:
    if "#" in text:
        return AgentId.parse(text)
    return text


def encode(m: Message, p: StackProfile) -> bytes:
    """Encode a message envelope under the given profile."""
    if len(m.payload) > p.max_payload:
        raise PayloadTooLarge(
            f"payload of {len(m.payload)} bytes exceeds profile max_payload {p.max_payload}"
        )
    if p.codec is Codec.TEXT_STRUCTURED:
        doc = {
            "msg_id": m.msg_id,
            "src": str(m.src),
            "dst": _dst_text(m.dst),
            "kind": m.kind.value,
            "correlation_id": m.correlation_id,
            "sim_time": m.sim_time,
            "payload": base64.b64encode(m.payload).decode("ascii"),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    src_b = str(m.src).encode("utf-8")
    dst_b = _dst_text(m.dst).encode("utf-8")
    body = b"".join(
        (
            struct.pack(">Q", m.msg_id),
            struct.pack(">H", len(src_b)),
            src_b,
            struct.pack(">H", len(dst_b)),
            dst_b,
            struct.pack(">B", _KIND_ORDINAL[m.kind]),
            struct.pack(">BQ", 1 if m.correlation_id is not None else 0, m.correlation_id or 0),
            struct.pack(">Q", m.sim_time),
            struct.pack(">I", len(m.payload)),
            m.payload,
        )
    )
    return struct.pack(">I", len(body)) + body


class _Cursor:
    """Bounds-checked reader over a frame body."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedFrame("truncated frame")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.data)


def decode(b: bytes, p: StackProfile) -> Message:
    """Decode bytes produced by encode under the same profile.

    Raises MalformedFrame on anything that is not a complete frame; a
    partial message is never returned.
    """
    if p.codec is Codec.TEXT_STRUCTURED:
        return _decode_text(b, p)
    return _decode_binary(b, p)


_TEXT_FIELDS = {"msg_id", "src", "dst", "kind", "correlation_id", "sim_time", "payload"}


def _decode_text(b: bytes, p: StackProfile) -> Message:
    try:
        doc = json.loads(b.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"not a JSON frame: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != _TEXT_FIELDS:
        raise MalformedFrame("JSON frame does not carry exactly the envelope fields")
    try:
        payload = base64.b64decode(doc["payload"], validate=True)
        msg = Message(
            msg_id=doc["msg_id"],
            src=AgentId.parse(doc["src"]),
            dst=_parse_dst(doc["dst"]),
            kind=MessageKind(doc["kind"]),
            payload=payload,
            sim_time=doc["sim_time"],
            correlation_id=doc["correlation_id"],
        )
    except (ValueError, TypeError, KeyError) as exc:
        raise MalformedFrame(f"bad envelope field: {exc}") from exc
    if len(msg.payload) > p.max_payload:
        raise MalformedFrame("payload exceeds profile max_payload")
    return msg


def _decode_binary(b: bytes, p: StackProfile) -> Message:
    if len(b) < 4:
        raise MalformedFrame("frame shorter than length prefix")
    (body_len,) = struct.unpack(">I", b[:4])
    body = b[4:]
    if len(body) != body_len:
        raise MalformedFrame(
            f"length prefix says {body_len} bytes, frame carries {len(body)}"
        )
    cur = _Cursor(body)
    try:
        msg_id = cur.u64()
        src = AgentId.parse(cur.take(cur.u16()).decode("utf-8"))
        dst = _parse_dst(cur.take(cur.u16()).decode("utf-8"))
        kind_ord = cur.u8()
        if kind_ord not in _ORDINAL_KIND:
            raise MalformedFrame(f"unknown message kind ordinal {kind_ord}")
        has_corr = cur.u8()
        corr = cur.u64()
        sim_time = cur.u64()
        payload = cur.take(cur.u32())
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedFrame(f"bad envelope field: {exc}") from exc
    if not cur.done():
        raise MalformedFrame("trailing bytes after envelope")
    if len(payload) > p.max_payload:
        raise MalformedFrame("payload exceeds profile max_payload")
    try:
        return Message(
            msg_id=msg_id,
            src=src,
            dst=dst,
            kind=_ORDINAL_KIND[kind_ord],
            payload=payload,
            sim_time=sim_time,
            correlation_id=corr if has_corr else None,
        )
    except ValueError as exc:
        raise MalformedFrame(f"inconsistent envelope: {exc}") from exc


def encode_body(obj: object) -> bytes:
    """Canonical JSON bytes for a structured message body."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_body(payload: bytes) -> object:
    """Inverse of encode_body; empty payloads carry no body."""
    if not payload:
        return None
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrame(f"unparseable message body: {exc}") from exc
