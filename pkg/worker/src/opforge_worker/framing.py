"""Protocol v1 framing for the worker side.

Implemented against the published protocol document (4-byte big-endian
length prefix, UTF-8 JSON body with v/id/type/payload); deliberately
self-contained so the worker depends on the wire format, not on the
orchestrator package.
"""

from __future__ import annotations

import json
import struct
from typing import IO

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024
_LEN = struct.Struct(">I")


class FramingError(Exception):
    pass


class VersionError(FramingError):
    pass


def encode(msg_id: str, msg_type: str, payload: dict) -> bytes:
    body = json.dumps(
        {"v": PROTOCOL_VERSION, "id": msg_id, "type": msg_type, "payload": payload},
        sort_keys=True,
    ).encode("utf-8")
    if len(body) > MAX_FRAME_BYTES:
        raise FramingError(f"frame body is {len(body)} bytes")
    return _LEN.pack(len(body)) + body


def write(stream: IO[bytes], msg_id: str, msg_type: str, payload: dict) -> None:
    stream.write(encode(msg_id, msg_type, payload))
    stream.flush()


def read(stream: IO[bytes]):
    """Read one message as (id, type, payload); None on clean EOF."""
    prefix = _read_exact(stream, _LEN.size)
    if prefix is None:
        return None
    (length,) = _LEN.unpack(prefix)
    if length > MAX_FRAME_BYTES:
        raise FramingError(f"declared body of {length} bytes")
    body = _read_exact(stream, length)
    if body is None:
        raise FramingError("stream ended mid-frame")
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FramingError(f"frame body is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FramingError("frame body must be a JSON object")
    if doc.get("v") != PROTOCOL_VERSION:
        raise VersionError(f"unsupported protocol version {doc.get('v')!r}")
    if "id" not in doc or "type" not in doc:
        raise FramingError("frame body missing id or type")
    return doc["id"], doc["type"], doc.get("payload", {})


def _read_exact(stream: IO[bytes], n: int):
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise FramingError("stream ended mid-frame")
        buf += chunk
    return buf
