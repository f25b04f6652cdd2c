"""Binary message encoding and delimiter framing for sensor report links.

Message layout (little-endian)::

    [kind u8][device_id u16][timestamp u32][payload]

Frame layout on the TCP stream::

    escaped(payload || crc16_be) || 0x0A

where 0x0A is escaped as 0x1B 0x01 and 0x1B as 0x1B 0x02. The CRC is
CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection).
"""

from __future__ import annotations

import binascii
import enum
import struct
from dataclasses import dataclass
from typing import Callable, Iterable

DELIMITER = 0x0A
ESCAPE = 0x1B
_ESCAPE_CODES = {DELIMITER: 0x01, ESCAPE: 0x02}
_UNESCAPE_CODES = {v: k for k, v in _ESCAPE_CODES.items()}

MAX_MESSAGE_BYTES = 128
MAX_FRAME_PAYLOAD = 131
CRC_BYTES = 2

HEADER = struct.Struct("<BHI")
SAMPLE_BODY = struct.Struct("<hHHhhhB")
OCC_BODY = struct.Struct("<B")
ORI_BODY = struct.Struct("<Bb")

TEMP_RANGE = (-4000, 8500)
RH_RANGE = (0, 10000)
ACCEL_RANGE = (-8000, 8000)


class Kind(enum.IntEnum):
    SAMPLE = 0x01
    OCC_EVENT = 0x02
    ORI_EVENT = 0x03


class Axis(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2


class WireError(ValueError):
    pass


class RangeError(WireError):
    pass


class DecodeError(WireError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class FrameError(WireError):
    pass


@dataclass(frozen=True)
class SensorMessage:
    """One timestamped reading set or asynchronous event from a node.

    Only the fields belonging to ``kind`` are meaningful; the others keep
    their zero defaults so equality after a decode round-trip is exact.
    """

    device_id: int
    timestamp: int
    kind: Kind
    temperature: int = 0  # centi-degC
    relative_humidity: int = 0  # centi-%RH
    illuminance: int = 0  # lux
    accel_x: int = 0  # milli-g
    accel_y: int = 0
    accel_z: int = 0
    occupancy_fraction: int = 0  # 0..255 -> 0..100 %
    state: int = 0
    dominant_axis: Axis = Axis.X
    sign: int = 1

    @classmethod
    def sample(
        cls,
        device_id: int,
        timestamp: int,
        temperature: int,
        relative_humidity: int,
        illuminance: int,
        accel: tuple[int, int, int],
        occupancy_fraction: int,
    ) -> SensorMessage:
        return cls(
            device_id,
            timestamp,
            Kind.SAMPLE,
            temperature=temperature,
            relative_humidity=relative_humidity,
            illuminance=illuminance,
            accel_x=accel[0],
            accel_y=accel[1],
            accel_z=accel[2],
            occupancy_fraction=occupancy_fraction,
        )

    @classmethod
    def occupancy(cls, device_id: int, timestamp: int, state: int) -> SensorMessage:
        return cls(device_id, timestamp, Kind.OCC_EVENT, state=state)

    @classmethod
    def orientation(cls, device_id: int, timestamp: int, axis: Axis, sign: int) -> SensorMessage:
        return cls(device_id, timestamp, Kind.ORI_EVENT, dominant_axis=Axis(axis), sign=sign)


def _check(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, int) or not lo <= value <= hi:
        raise RangeError(f"{name}={value!r} outside [{lo}, {hi}]")


def encode_message(msg: SensorMessage) -> bytes:
    _check("device_id", msg.device_id, 0, 0xFFFF)
    _check("timestamp", msg.timestamp, 0, 0xFFFFFFFF)
    header = HEADER.pack(int(msg.kind), msg.device_id, msg.timestamp)
    if msg.kind == Kind.SAMPLE:
        _check("temperature", msg.temperature, *TEMP_RANGE)
        _check("relative_humidity", msg.relative_humidity, *RH_RANGE)
        _check("illuminance", msg.illuminance, 0, 0xFFFF)
        for axis in ("accel_x", "accel_y", "accel_z"):
            _check(axis, getattr(msg, axis), *ACCEL_RANGE)
        _check("occupancy_fraction", msg.occupancy_fraction, 0, 255)
        body = SAMPLE_BODY.pack(
            msg.temperature,
            msg.relative_humidity,
            msg.illuminance,
            msg.accel_x,
            msg.accel_y,
            msg.accel_z,
            msg.occupancy_fraction,
        )
    elif msg.kind == Kind.OCC_EVENT:
        _check("state", msg.state, 0, 1)
        body = OCC_BODY.pack(msg.state)
    elif msg.kind == Kind.ORI_EVENT:
        _check("dominant_axis", int(msg.dominant_axis), 0, 2)
        if msg.sign not in (1, -1):
            raise RangeError(f"sign={msg.sign!r} must be +1 or -1")
        body = ORI_BODY.pack(int(msg.dominant_axis), msg.sign)
    else:
        raise RangeError(f"unknown kind {msg.kind!r}")
    return header + body


def decode_message(data: bytes) -> SensorMessage:
    if len(data) < HEADER.size:
        raise DecodeError(f"truncated header ({len(data)} of {HEADER.size} bytes)", len(data))
    kind_byte, device_id, timestamp = HEADER.unpack_from(data, 0)
    try:
        kind = Kind(kind_byte)
    except ValueError:
        raise DecodeError(f"unknown kind 0x{kind_byte:02X}", 0) from None
    body_struct = {Kind.SAMPLE: SAMPLE_BODY, Kind.OCC_EVENT: OCC_BODY, Kind.ORI_EVENT: ORI_BODY}[kind]
    expected = HEADER.size + body_struct.size
    if len(data) < expected:
        raise DecodeError(f"truncated {kind.name} payload ({len(data)} of {expected} bytes)", len(data))
    if len(data) > expected:
        raise DecodeError(f"{len(data) - expected} trailing bytes after {kind.name}", expected)
    fields = body_struct.unpack_from(data, HEADER.size)
    if kind == Kind.SAMPLE:
        temp, rh, lux, ax, ay, az, occ = fields
        return SensorMessage.sample(device_id, timestamp, temp, rh, lux, (ax, ay, az), occ)
    if kind == Kind.OCC_EVENT:
        if fields[0] > 1:
            raise DecodeError(f"occupancy state {fields[0]} not 0/1", HEADER.size)
        return SensorMessage.occupancy(device_id, timestamp, fields[0])
    axis, sign = fields
    if axis > 2 or sign not in (1, -1):
        raise DecodeError(f"bad orientation axis={axis} sign={sign}", HEADER.size)
    return SensorMessage.orientation(device_id, timestamp, Axis(axis), sign)


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE."""
    return binascii.crc_hqx(data, 0xFFFF)


def escape(data: bytes) -> bytes:
    out = bytearray()
    for b in data:
        if b in _ESCAPE_CODES:
            out.append(ESCAPE)
            out.append(_ESCAPE_CODES[b])
        else:
            out.append(b)
    return bytes(out)


def unescape(data: bytes) -> bytes:
    out = bytearray()
    it = iter(data)
    for b in it:
        if b == ESCAPE:
            code = next(it, None)
            if code not in _UNESCAPE_CODES:
                raise FrameError("invalid escape sequence")
            out.append(_UNESCAPE_CODES[code])
        elif b == DELIMITER:
            raise FrameError("bare delimiter inside frame body")
        else:
            out.append(b)
    return bytes(out)


def frame_encode(payload: bytes) -> bytes:
    if not 1 <= len(payload) <= MAX_FRAME_PAYLOAD:
        raise FrameError(f"payload length {len(payload)} outside 1..{MAX_FRAME_PAYLOAD}")
    body = bytes(payload) + crc16(payload).to_bytes(2, "big")
    return escape(body) + bytes([DELIMITER])


def _check_body(escaped: bytes) -> bytes | None:
    try:
        body = unescape(escaped)
    except FrameError:
        return None
    if not CRC_BYTES < len(body) <= MAX_FRAME_PAYLOAD + CRC_BYTES:
        return None
    payload, crc = body[:-CRC_BYTES], body[-CRC_BYTES:]
    if crc16(payload) != int.from_bytes(crc, "big"):
        return None
    return payload


# A damaged segment may have swallowed the delimiter of an earlier frame, so the
# intact frame that follows sits at its tail; never longer than this when escaped.
_MAX_ESCAPED_BODY = 2 * (MAX_FRAME_PAYLOAD + CRC_BYTES)


class FrameDecoder:
    """Incremental frame splitter for one connection.

    Feed arbitrary chunks; complete, CRC-valid payloads come back in order.
    Bad segments are counted in ``dropped`` and skipped.
    """

    def __init__(self) -> None:
        self._buf = bytearray()
        self.delivered = 0
        self.dropped = 0

    def feed(self, chunk: bytes) -> list[bytes]:
        self._buf.extend(chunk)
        out: list[bytes] = []
        while True:
            idx = self._buf.find(DELIMITER)
            if idx < 0:
                break
            segment = bytes(self._buf[:idx])
            del self._buf[: idx + 1]
            if not segment:
                continue
            payload = self._decode_segment(segment)
            if payload is not None:
                out.append(payload)
        self.delivered += len(out)
        return out

    def _decode_segment(self, segment: bytes) -> bytes | None:
        payload = _check_body(segment)
        if payload is not None:
            return payload
        self.dropped += 1
        # longest intact tail first; the head is the damaged remainder
        first = max(1, len(segment) - _MAX_ESCAPED_BODY)
        for start in range(first, len(segment) - CRC_BYTES):
            payload = _check_body(segment[start:])
            if payload is not None:
                return payload
        return None

    def finish(self) -> int:
        """Close the stream; an unterminated tail counts as one dropped frame."""
        if self._buf:
            self.dropped += 1
            self._buf.clear()
        return self.dropped

    @property
    def pending(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class StreamResult:
    delivered: int
    dropped: int


def frame_decode_stream(data: bytes | Iterable[bytes], sink: Callable[[bytes], None]) -> StreamResult:
    decoder = FrameDecoder()
    chunks = [data] if isinstance(data, (bytes, bytearray, memoryview)) else data
    for chunk in chunks:
        for payload in decoder.feed(bytes(chunk)):
            sink(payload)
    decoder.finish()
    return StreamResult(decoder.delivered, decoder.dropped)


def frame_decode(frame: bytes) -> bytes:
    """Decode exactly one encoded frame; raises on any defect."""
    if not frame or frame[-1] != DELIMITER:
        raise FrameError("frame not terminated by delimiter")
    payload = _check_body(frame[:-1])
    if payload is None:
        raise FrameError("bad frame body or CRC mismatch")
    return payload


# Report session control frames and acknowledgement bytes.
PROTOCOL_VERSION = 1
HELLO_TAG = 0x48
END_TAG = 0x45
ACK = 0x06
NAK = 0x15
_HELLO = struct.Struct("<BHBH")
_END = struct.Struct("<BH")


@dataclass(frozen=True)
class Hello:
    device_id: int
    version: int
    record_count: int


def encode_hello(device_id: int, record_count: int, version: int = PROTOCOL_VERSION) -> bytes:
    return _HELLO.pack(HELLO_TAG, device_id, version, record_count)


def decode_hello(payload: bytes) -> Hello:
    if len(payload) != _HELLO.size or payload[0] != HELLO_TAG:
        raise DecodeError("not a HELLO frame", 0)
    _, device_id, version, count = _HELLO.unpack(payload)
    return Hello(device_id, version, count)


def encode_end(messages_sent: int) -> bytes:
    return _END.pack(END_TAG, messages_sent)


def decode_end(payload: bytes) -> int | None:
    """Message count of an END frame, or None if ``payload`` is not one."""
    if len(payload) != _END.size or payload[0] != END_TAG:
        return None
    return _END.unpack(payload)[1]
