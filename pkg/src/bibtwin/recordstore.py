"""Append-only template/delta record buffer.

Records are written back to back into a bounded arena and never modified
afterwards, so the arena doubles as the report dump sent to the gateway.

TEMPLATE record::

    [L - 1 : u8, 0x00..0x7F][L message bytes]

DELTA record::

    [0x80 | T][N][(offset u8, length u8, bytes) * N]

A delta reconstructs its message by patching template ``T`` with the N spans.
It is written only while it costs less than ``max_delta_fraction`` of a fresh
template record; past that the readings have drifted far enough from the
template that re-basing pays for itself within a few records.
Template slots form a ring of 128: the 129th template reuses slot 0, so every
record can still address any live template with 7 bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

MAX_MESSAGE = 128
MAX_TEMPLATES = 128
DELTA_FLAG = 0x80
GAP_MERGE = 2


class RecordStoreError(Exception):
    pass


class MessageSizeError(RecordStoreError, ValueError):
    pass


class CapacityError(RecordStoreError):
    pass


class RecordDecodeError(RecordStoreError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


def diff_spans(template: bytes, message: bytes) -> list[tuple[int, bytes]]:
    """Differing byte runs of two equal-length buffers.

    Runs separated by at most ``GAP_MERGE`` equal bytes are merged, since a
    span header costs 2 bytes.
    """
    spans: list[list[int]] = []
    for i, (a, b) in enumerate(zip(template, message)):
        if a == b:
            continue
        if spans and i - spans[-1][1] <= GAP_MERGE + 1:
            spans[-1][1] = i
        else:
            spans.append([i, i])
    return [(lo, bytes(message[lo : hi + 1])) for lo, hi in spans]


def encode_template(message: bytes) -> bytes:
    return bytes([len(message) - 1]) + message


def encode_delta(slot: int, spans: list[tuple[int, bytes]]) -> bytes:
    out = bytearray([DELTA_FLAG | slot, len(spans)])
    for offset, data in spans:
        out += bytes([offset, len(data)]) + data
    return bytes(out)


@dataclass
class RecordStoreStats:
    raw_bytes: int = 0
    stored_bytes: int = 0

    @property
    def ratio(self) -> float:
        if self.stored_bytes == 0:
            return 1.0
        return self.raw_bytes / self.stored_bytes


@dataclass
class RecordStore:
    """One node's sample buffer.

    ``templates`` holds arena offsets of the live template records (the
    template pointer list); ``_slots`` maps ring slots to them.
    """

    capacity_bytes: int = 16384 - 2416
    buffer: bytearray = field(default_factory=bytearray)
    templates: list[int] = field(default_factory=list)
    record_count: int = 0
    stats: RecordStoreStats = field(default_factory=RecordStoreStats)  # current contents
    total: RecordStoreStats = field(default_factory=RecordStoreStats)  # survives clear()
    max_delta_fraction: float = 0.75
    _templates_emitted: int = field(default=0, init=False, repr=False)
    _slots: dict[int, int] = field(default_factory=dict, init=False, repr=False)  # slot -> arena offset

    def __post_init__(self) -> None:
        if not 0 < self.max_delta_fraction <= 1:
            raise ValueError("max_delta_fraction must be in (0, 1]")

    @property
    def free_bytes(self) -> int:
        return self.capacity_bytes - len(self.buffer)

    def _template_bytes(self, offset: int) -> bytes:
        length = self.buffer[offset] + 1
        return bytes(self.buffer[offset + 1 : offset + 1 + length])

    def _pick_template(self, length: int) -> tuple[int, bytes] | None:
        # most recently emitted live template of identical length
        for k in range(self._templates_emitted - 1, max(-1, self._templates_emitted - 1 - MAX_TEMPLATES), -1):
            slot = k % MAX_TEMPLATES
            tpl = self._template_bytes(self._slots[slot])
            if len(tpl) == length:
                return slot, tpl
        return None

    def encode_record(self, message: bytes) -> tuple[bytes, bool]:
        """The record that appending ``message`` would write, and whether it is a template."""
        if not 1 <= len(message) <= MAX_MESSAGE:
            raise MessageSizeError(f"message length {len(message)} outside 1..{MAX_MESSAGE}")
        picked = self._pick_template(len(message))
        if picked is not None:
            slot, tpl = picked
            delta = encode_delta(slot, diff_spans(tpl, message))
            if len(delta) < self.max_delta_fraction * (len(message) + 1):
                return delta, False
        return encode_template(message), True

    def append(self, message: bytes) -> int:
        message = bytes(message)
        record, is_template = self.encode_record(message)
        if len(record) > self.free_bytes:
            raise CapacityError(f"record of {len(record)} bytes does not fit in {self.free_bytes} free bytes")
        offset = len(self.buffer)
        self.buffer += record
        if is_template:
            slot = self._templates_emitted % MAX_TEMPLATES
            if slot in self._slots:
                self.templates.remove(self._slots[slot])
            self._slots[slot] = offset
            self.templates.append(offset)
            self._templates_emitted += 1
        self.record_count += 1
        self.stats.raw_bytes += len(message)
        self.stats.stored_bytes += len(record)
        self.total.raw_bytes += len(message)
        self.total.stored_bytes += len(record)
        return len(record)

    def dump(self) -> bytes:
        return bytes(self.buffer)

    def records(self) -> list[bytes]:
        """The arena split at record boundaries (one wire frame each)."""
        out = []
        pos = 0
        while pos < len(self.buffer):
            end = record_end(self.buffer, pos)
            out.append(bytes(self.buffer[pos:end]))
            pos = end
        return out

    def clear(self) -> None:
        self.buffer.clear()
        self.templates.clear()
        self._slots.clear()
        self._templates_emitted = 0
        self.record_count = 0
        self.stats = RecordStoreStats()


def record_end(data: bytes | bytearray, pos: int) -> int:
    """Offset just past the record starting at ``pos``; raises on truncation."""
    header = data[pos]
    if header & DELTA_FLAG == 0:
        end = pos + 1 + header + 1
    else:
        if pos + 2 > len(data):
            raise RecordDecodeError("truncated delta header", pos)
        end = pos + 2
        for _ in range(data[pos + 1]):
            if end + 2 > len(data):
                raise RecordDecodeError("truncated span header", pos)
            end += 2 + data[end + 1]
    if end > len(data):
        raise RecordDecodeError("truncated record", pos)
    return end


class RecordDecoder:
    """Replays records against its own template ring.

    Used both for whole dumps and record-at-a-time on a gateway connection.
    """

    def __init__(self) -> None:
        self._slots: dict[int, bytes] = {}
        self._emitted = 0
        self.dropped = 0

    def decode_record(self, record: bytes, offset: int = 0) -> bytes | None:
        """Message for one complete record, or None if its template is unknown."""
        if not record:
            raise RecordDecodeError("empty record", offset)
        end = record_end(record, 0)
        if end != len(record):
            raise RecordDecodeError(f"{len(record) - end} bytes after record", offset + end)
        header = record[0]
        if header & DELTA_FLAG == 0:
            message = bytes(record[1:])
            self._slots[self._emitted % MAX_TEMPLATES] = message
            self._emitted += 1
            return message
        slot = header & 0x7F
        template = self._slots.get(slot)
        if template is None:
            self.dropped += 1
            return None
        out = bytearray(template)
        pos = 2
        for _ in range(record[1]):
            span_off, span_len = record[pos], record[pos + 1]
            if span_off + span_len > len(out):
                raise RecordDecodeError(
                    f"span {span_off}+{span_len} beyond template length {len(out)}", offset + pos
                )
            out[span_off : span_off + span_len] = record[pos + 2 : pos + 2 + span_len]
            pos += 2 + span_len
        return bytes(out)


@dataclass
class DecodeResult:
    messages: list[bytes]
    dropped: int = 0
    error: str | None = None
    error_offset: int | None = None


def rs_decode(data: bytes) -> DecodeResult:
    decoder = RecordDecoder()
    result = DecodeResult(messages=[])
    pos = 0
    while pos < len(data):
        try:
            end = record_end(data, pos)
            message = decoder.decode_record(bytes(data[pos:end]), pos)
        except RecordDecodeError as exc:
            result.error = str(exc)
            result.error_offset = exc.offset
            break
        if message is not None:
            result.messages.append(message)
        pos = end
    result.dropped = decoder.dropped
    return result


def rs_max_messages(ram_bytes: int, program_bytes: int, avg_msg_bytes: int | float) -> int:
    """Uncompressed message capacity of the RAM left over by the program."""
    if min(ram_bytes, avg_msg_bytes) <= 0 or program_bytes < 0:
        raise ValueError("sizes must be positive")
    if program_bytes >= ram_bytes:
        raise ValueError(f"program ({program_bytes} B) leaves no RAM of {ram_bytes} B")
    return int((ram_bytes - program_bytes) // avg_msg_bytes)
