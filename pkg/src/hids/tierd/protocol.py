"""Length-prefixed JSON frames exchanged between tier nodes.

A frame is a 4-byte big-endian body length followed by a UTF-8 JSON object
whose keys appear in the fixed order ``v, kind, id, payload``.
"""

from __future__ import annotations

import asyncio
import json
import struct
from dataclasses import dataclass, field

from ..errors import BadVersion, FrameTooLarge, MalformedJson, ProtocolError, UnknownKind

VERSION = 1
MAX_FRAME = 1 << 20  # body bytes
KINDS = ("Flow", "Verdict", "QuarantineNotice", "Health")
_PREFIX = struct.Struct(">I")
_MAX_ID = (1 << 64) - 1


@dataclass(frozen=True)
class TierMessage:
    kind: str
    id: int
    payload: dict = field(default_factory=dict)
    v: int = VERSION


def _check(kind, msg_id, version) -> None:
    if version != VERSION or isinstance(version, bool):
        raise BadVersion(f"unsupported protocol version {version!r}")
    if kind not in KINDS:
        raise UnknownKind(f"unknown message kind {kind!r}")
    if not isinstance(msg_id, int) or isinstance(msg_id, bool) or not 0 <= msg_id <= _MAX_ID:
        raise ProtocolError(f"message id must be a 64-bit unsigned integer, got {msg_id!r}")


def encode_body(msg: TierMessage) -> bytes:
    _check(msg.kind, msg.id, msg.v)
    try:
        body = json.dumps({"v": msg.v, "kind": msg.kind, "id": msg.id, "payload": msg.payload},
                          separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"payload is not JSON-serialisable: {exc}") from None
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame body of {len(body)} bytes exceeds {MAX_FRAME}")
    return body


def encode(msg: TierMessage) -> bytes:
    body = encode_body(msg)
    return _PREFIX.pack(len(body)) + body


def decode_body(body: bytes) -> TierMessage:
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame body of {len(body)} bytes exceeds {MAX_FRAME}")
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(obj, dict) or set(obj) != {"v", "kind", "id", "payload"}:
        raise MalformedJson("frame must be an object with keys v, kind, id, payload")
    _check(obj["kind"], obj["id"], obj["v"])
    if not isinstance(obj["payload"], dict):
        raise MalformedJson("payload must be an object")
    return TierMessage(obj["kind"], obj["id"], obj["payload"], obj["v"])


def decode(frame: bytes) -> TierMessage:
    """Decode one complete frame (prefix + body)."""
    if len(frame) < _PREFIX.size:
        raise ProtocolError("truncated length prefix")
    (n,) = _PREFIX.unpack_from(frame)
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
    if len(frame) != _PREFIX.size + n:
        raise ProtocolError(f"frame length mismatch: header says {n}, have {len(frame) - _PREFIX.size}")
    return decode_body(frame[_PREFIX.size:])


class FrameDecoder:
    """Incremental decoder: ``feed`` bytes as they arrive, get whole messages back."""

    def __init__(self):
        self._buf = bytearray()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def needed(self) -> int:
        """Bytes still missing before the next frame is complete (0 if one is ready)."""
        if len(self._buf) < _PREFIX.size:
            return _PREFIX.size - len(self._buf)
        (n,) = _PREFIX.unpack_from(self._buf)
        return max(0, _PREFIX.size + n - len(self._buf))

    def feed(self, data: bytes) -> list[TierMessage]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= _PREFIX.size:
            (n,) = _PREFIX.unpack_from(self._buf)
            if n > MAX_FRAME:
                raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
            if len(self._buf) < _PREFIX.size + n:
                break
            body = bytes(self._buf[_PREFIX.size:_PREFIX.size + n])
            del self._buf[:_PREFIX.size + n]
            out.append(decode_body(body))
        return out


async def read_message(reader: asyncio.StreamReader) -> TierMessage | None:
    """Next message, or None on a clean end of stream between frames."""
    try:
        head = await reader.readexactly(_PREFIX.size)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise ProtocolError("connection closed inside a length prefix") from None
    (n,) = _PREFIX.unpack(head)
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared frame length {n} exceeds {MAX_FRAME}")
    try:
        body = await reader.readexactly(n)
    except asyncio.IncompleteReadError:
        raise ProtocolError("connection closed inside a frame body") from None
    return decode_body(body)


async def write_message(writer: asyncio.StreamWriter, msg: TierMessage) -> None:
    writer.write(encode(msg))
    await writer.drain()


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
