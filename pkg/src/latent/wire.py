"""Length-prefixed framing between data owners and the curator.

Every frame is a 10-byte header followed by the payload::

    magic "LTNT" | version u8 | type u8 | payload length u32 LE | payload

Hello, norm-stats, done and error payloads are UTF-8 JSON.  A record
payload is binary, little-endian::

    client_id u64 | label u16 | bit_count u32 | ceil(bit_count/8) packed bytes
    | protocol code u8 | epsilon f64 | alpha f64

Bits are packed eight per byte, most significant bit first, and the unused
low bits of the last byte must be zero.
"""

from __future__ import annotations

import asyncio
import enum
import json
import struct
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .encoding import EncodingSpec, NormStats
from .ldp import PrivacyParams, ProtocolKind

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "MsgType",
    "ProtocolError",
    "Hello",
    "NormStatsMsg",
    "RandomizedRecord",
    "Done",
    "ErrorMsg",
    "frame_encode",
    "frame_decode",
    "decode_header",
    "read_message",
]

MAGIC = b"LTNT"
VERSION = 1
_HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = _HEADER.size
MAX_PAYLOAD = 1 << 26
_REC_HEAD = struct.Struct("<QHI")
_REC_TAIL = struct.Struct("<Bdd")


class MsgType(enum.IntEnum):
    HELLO = 0
    NORM_STATS = 1
    RECORD = 2
    DONE = 3
    ERROR = 4


class ProtocolError(ValueError):
    """Malformed frame; ``offset`` is the byte position where decoding failed."""

    def __init__(self, message: str, offset: Optional[int] = None, missing: Optional[int] = None):
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(message + where)
        self.offset = offset
        self.missing = missing


@dataclass(frozen=True)
class Hello:
    client_id: int


@dataclass(frozen=True)
class NormStatsMsg:
    """Session parameters the curator hands every owner at connect time."""

    stats: NormStats
    spec: EncodingSpec
    params: PrivacyParams
    protocol: ProtocolKind
    randomize: bool = True

    def __eq__(self, other):
        if not isinstance(other, NormStatsMsg):
            return NotImplemented
        return (
            np.array_equal(self.stats.mean, other.stats.mean)
            and np.array_equal(self.stats.std, other.stats.std)
            and (self.spec, self.params, self.protocol, self.randomize)
            == (other.spec, other.params, other.protocol, other.randomize)
        )


@dataclass(frozen=True, eq=False)
class RandomizedRecord:
    client_id: int
    label: int
    bits: np.ndarray
    protocol: ProtocolKind
    epsilon: float
    alpha: float

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1:
            raise ValueError("bits must be 1-D")
        if bits.size and bits.max() > 1:
            raise ValueError("bits must be 0 or 1")
        if not 0 <= self.client_id < 2**64:
            raise ValueError("client_id must fit in 64 bits")
        if not 0 <= self.label < 2**16:
            raise ValueError("label must fit in 16 bits")
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "protocol", ProtocolKind(self.protocol))

    @property
    def bit_count(self) -> int:
        return int(self.bits.size)

    def __eq__(self, other):
        if not isinstance(other, RandomizedRecord):
            return NotImplemented
        return (
            (self.client_id, self.label, self.protocol, self.epsilon, self.alpha)
            == (other.client_id, other.label, other.protocol, other.epsilon, other.alpha)
            and np.array_equal(self.bits, other.bits)
        )


@dataclass(frozen=True)
class Done:
    client_id: int
    records: int


@dataclass(frozen=True)
class ErrorMsg:
    message: str


Message = Union[Hello, NormStatsMsg, RandomizedRecord, Done, ErrorMsg]


def _json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True).encode()


def _encode_payload(msg: Message) -> Tuple[MsgType, bytes]:
    if isinstance(msg, RandomizedRecord):
        packed = np.packbits(msg.bits).tobytes()
        head = _REC_HEAD.pack(msg.client_id, msg.label, msg.bit_count)
        return MsgType.RECORD, head + packed + _REC_TAIL.pack(msg.protocol.code, msg.epsilon, msg.alpha)
    if isinstance(msg, Hello):
        return MsgType.HELLO, _json({"client_id": msg.client_id})
    if isinstance(msg, NormStatsMsg):
        return MsgType.NORM_STATS, _json({
            "stats": msg.stats.to_dict(),
            "encoding": {"whole_bits": msg.spec.whole_bits, "frac_bits": msg.spec.frac_bits},
            "privacy": {"epsilon": msg.params.epsilon, "alpha": msg.params.alpha, "sensitivity": msg.params.sensitivity},
            "protocol": msg.protocol.value,
            "randomize": msg.randomize,
        })
    if isinstance(msg, Done):
        return MsgType.DONE, _json({"client_id": msg.client_id, "records": msg.records})
    if isinstance(msg, ErrorMsg):
        return MsgType.ERROR, _json({"message": msg.message})
    raise TypeError(f"cannot frame {type(msg).__name__}")


def frame_encode(msg: Message) -> bytes:
    kind, payload = _encode_payload(msg)
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD}-byte limit")
    return _HEADER.pack(MAGIC, VERSION, kind, len(payload)) + payload


def decode_header(header: bytes, offset: int = 0) -> Tuple[MsgType, int]:
    """Validate a 10-byte header; returns ``(type, payload_length)``."""
    if len(header) < HEADER_SIZE:
        missing = HEADER_SIZE - len(header)
        raise ProtocolError(f"truncated header: {missing} byte(s) missing", offset + len(header), missing)
    magic, version, kind, length = _HEADER.unpack_from(header)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}", offset)
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}", offset + 4)
    try:
        kind = MsgType(kind)
    except ValueError:
        raise ProtocolError(f"unknown message type {kind}", offset + 5) from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds limit", offset + 6)
    return kind, length


def _decode_json(payload: bytes, offset: int) -> dict:
    try:
        doc = json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"invalid JSON payload: {exc}", offset) from None
    if not isinstance(doc, dict):
        raise ProtocolError("JSON payload must be an object", offset)
    return doc


def _decode_record(payload: bytes, offset: int) -> RandomizedRecord:
    if len(payload) < _REC_HEAD.size:
        raise ProtocolError("record payload shorter than its fixed header", offset)
    client_id, label, count = _REC_HEAD.unpack_from(payload)
    n_bytes = -(-count // 8)
    expected = _REC_HEAD.size + n_bytes + _REC_TAIL.size
    if len(payload) != expected:
        raise ProtocolError(
            f"record declares {count} bits ({expected} payload bytes) but carries {len(payload)}",
            offset + 10,
        )
    start = _REC_HEAD.size
    packed = np.frombuffer(payload, dtype=np.uint8, count=n_bytes, offset=start)
    if count % 8 and packed[-1] & ((1 << (8 - count % 8)) - 1):
        raise ProtocolError("non-zero padding bits in the last packed byte", offset + start + n_bytes - 1)
    code, epsilon, alpha = _REC_TAIL.unpack_from(payload, start + n_bytes)
    try:
        protocol = ProtocolKind.from_code(code)
    except ValueError:
        raise ProtocolError(f"unknown protocol code {code}", offset + start + n_bytes) from None
    bits = np.unpackbits(packed, count=count)
    return RandomizedRecord(client_id, label, bits, protocol, epsilon, alpha)


def _decode_payload(kind: MsgType, payload: bytes, offset: int) -> Message:
    if kind is MsgType.RECORD:
        return _decode_record(payload, offset)
    doc = _decode_json(payload, offset)
    try:
        if kind is MsgType.HELLO:
            return Hello(int(doc["client_id"]))
        if kind is MsgType.NORM_STATS:
            enc, priv = doc["encoding"], doc["privacy"]
            return NormStatsMsg(
                NormStats.from_dict(doc["stats"]),
                EncodingSpec(int(enc["whole_bits"]), int(enc["frac_bits"])),
                PrivacyParams(float(priv["epsilon"]), float(priv["alpha"]), int(priv["sensitivity"])),
                ProtocolKind(doc["protocol"]),
                bool(doc.get("randomize", True)),
            )
        if kind is MsgType.DONE:
            return Done(int(doc["client_id"]), int(doc["records"]))
        return ErrorMsg(str(doc["message"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad {kind.name.lower()} payload: {exc!r}", offset) from None


def frame_decode(data: bytes) -> Message:
    """Decode exactly one frame; trailing or missing bytes are errors."""
    data = bytes(data)
    kind, length = decode_header(data[:HEADER_SIZE])
    have = len(data) - HEADER_SIZE
    if have < length:
        raise ProtocolError(
            f"truncated payload: {length - have} byte(s) missing of {length}", len(data), length - have
        )
    if have > length:
        raise ProtocolError(f"{have - length} trailing byte(s) after frame", HEADER_SIZE + length)
    return _decode_payload(kind, data[HEADER_SIZE:], HEADER_SIZE)


async def read_message(reader: asyncio.StreamReader, offset: int = 0) -> Tuple[Message, int]:
    """Read one frame from a stream; returns ``(message, bytes_consumed)``.

    ``offset`` is the stream position of the frame, used in diagnostics.
    Raises ``asyncio.IncompleteReadError`` only for a clean EOF before the
    first header byte.
    """
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            raise
        decode_header(exc.partial, offset)
        raise  # unreachable: a short header always fails above
    kind, length = decode_header(header, offset)
    try:
        payload = await reader.readexactly(length)
    except asyncio.IncompleteReadError as exc:
        missing = length - len(exc.partial)
        raise ProtocolError(
            f"truncated payload: {missing} byte(s) missing of {length}",
            offset + HEADER_SIZE + len(exc.partial),
            missing,
        ) from None
    return _decode_payload(kind, payload, offset + HEADER_SIZE), HEADER_SIZE + length
