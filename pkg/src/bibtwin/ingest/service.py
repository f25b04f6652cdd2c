"""The historian: flat files in, filtered and compressed streams out."""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..flatfile import ParseIssue, parse_flat_file
from .archive import StreamArchive, StreamKey
from .compression import (
    DEFAULT_SETTINGS,
    PASS_THROUGH,
    CompressionSettings,
    DoorState,
    ExceptionState,
    door_flush,
    exception_filter,
    swinging_door,
)

log = logging.getLogger(__name__)


@dataclass
class StreamCounters:
    points_in: int = 0
    passed: int = 0
    archived: int = 0
    dedup: int = 0
    conflicts: int = 0
    stale: int = 0
    rejected: int = 0


@dataclass
class _Stream:
    exc: ExceptionState
    door: DoorState
    counters: StreamCounters = field(default_factory=StreamCounters)


@dataclass
class IngestReport:
    name: str
    lines: int
    points: int
    archived: int
    issues: list[ParseIssue]


@dataclass
class HistorianStats:
    files: int = 0
    lines: int = 0
    s_lines: int = 0
    e_lines: int = 0
    parse_errors: int = 0
    points_in: int = 0
    archived: int = 0


class Historian:
    """Serializes ingestion; queries go straight to the archive."""

    def __init__(
        self,
        archive_dir: Path | str,
        settings: dict[str, CompressionSettings] | None = None,
        inbox: Path | str | None = None,
    ):
        self.archive = StreamArchive(archive_dir)
        self.settings = dict(DEFAULT_SETTINGS if settings is None else settings)
        self.inbox = Path(inbox) if inbox is not None else None
        if self.inbox is not None:
            self.inbox.mkdir(parents=True, exist_ok=True)
        self.stats = HistorianStats()
        self._streams: dict[StreamKey, _Stream] = {}
        self._lock = threading.Lock()

    def _stream(self, key: StreamKey) -> _Stream:
        st = self._streams.get(key)
        if st is None:
            # state after a flush is fully described by the last archived point
            last = self.archive.last_point(key)
            st = _Stream(ExceptionState(last=last), DoorState(archived=last))
            self._streams[key] = st
        return st

    def settings_for(self, stream: str) -> CompressionSettings:
        return self.settings.get(stream, PASS_THROUGH)

    def ingest_text(self, name: str, text: str) -> IngestReport:
        records, issues = parse_flat_file(text)
        for issue in issues:
            log.warning("%s:%d: %s", name, issue.line_no, issue.error)
        points = archived = 0
        with self._lock:
            touched: set[StreamKey] = set()
            for rec in records:
                t = float(rec.timestamp)
                for stream, value in rec.points():
                    key = StreamKey(rec.device_id, stream)
                    st = self._stream(key)
                    touched.add(key)
                    c = st.counters
                    c.points_in += 1
                    points += 1
                    cfg = self.settings_for(stream)
                    before = (st.exc.dedup, st.exc.conflicts, st.exc.stale)
                    if not exception_filter(st.exc, t, value, cfg):
                        c.dedup += st.exc.dedup - before[0]
                        c.conflicts += st.exc.conflicts - before[1]
                        c.stale += st.exc.stale - before[2]
                        continue
                    c.passed += 1
                    rejected = st.door.rejected
                    archived += self._write(key, st, swinging_door(st.door, t, value, cfg))
                    c.rejected += st.door.rejected - rejected
            for key in sorted(touched):
                st = self._streams[key]
                archived += self._write(key, st, door_flush(st.door))
            self.archive.flush()
            s = self.stats
            s.files += 1
            s.lines += len(records)
            s.s_lines += sum(1 for r in records if r.kind == "S")
            s.e_lines += sum(1 for r in records if r.kind != "S")
            s.parse_errors += len(issues)
            s.points_in += points
            s.archived += archived
        return IngestReport(name, len(records), points, archived, issues)

    def _write(self, key: StreamKey, st: _Stream, pts: list[tuple[float, float]]) -> int:
        for t, v in pts:
            self.archive.append(key, t, v)
        st.counters.archived += len(pts)
        return len(pts)

    def receive(self, name: str, body: bytes) -> IngestReport:
        """Store a pushed file in the inbox (overwriting) and ingest it."""
        safe = Path(name).name
        if not safe or safe.startswith(".") or safe != name:
            raise ValueError(f"refusing file name {name!r}")
        if self.inbox is not None:
            tmp = self.inbox / f".{safe}.tmp"
            tmp.write_bytes(body)
            os.replace(tmp, self.inbox / safe)
        return self.ingest_text(safe, body.decode("utf-8", errors="replace"))

    def stream_counters(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {str(k): asdict(v.counters) for k, v in sorted(self._streams.items())}

    def summary(self) -> dict[str, object]:
        with self._lock:
            return asdict(self.stats)

    def close(self) -> None:
        with self._lock:
            self.archive.close()
            self.archive.write_manifest()
