"""Length-prefixed file push used between the gateway and the ingest server.

Each push::

    [name_len u16][name utf-8][body_len u32][body][crc32(body) u32]

answered by one byte, ACK (0x06) once the body is verified and stored or
NAK (0x15) otherwise. Several pushes may share one connection.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import BinaryIO

ACK = b"\x06"
NAK = b"\x15"
MAX_BODY = 64 * 1024 * 1024


class TransferError(OSError):
    pass


def encode_push(name: str, body: bytes) -> bytes:
    raw = name.encode("utf-8")
    return (
        struct.pack("<H", len(raw))
        + raw
        + struct.pack("<I", len(body))
        + body
        + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    )


@dataclass(frozen=True)
class Push:
    name: str
    body: bytes
    crc_ok: bool


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise EOFError(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def read_push(stream: BinaryIO) -> Push | None:
    """Next push from ``stream``; None on a clean end of stream."""
    head = stream.read(2)
    if not head:
        return None
    if len(head) < 2:
        head += _read_exact(stream, 2 - len(head))
    (name_len,) = struct.unpack("<H", head)
    name = _read_exact(stream, name_len).decode("utf-8", errors="replace")
    (body_len,) = struct.unpack("<I", _read_exact(stream, 4))
    if body_len > MAX_BODY:
        raise TransferError(f"push body of {body_len} bytes exceeds {MAX_BODY}")
    body = _read_exact(stream, body_len)
    (crc,) = struct.unpack("<I", _read_exact(stream, 4))
    return Push(name, body, crc == zlib.crc32(body) & 0xFFFFFFFF)
