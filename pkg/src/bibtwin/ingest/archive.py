"""Append-only per-stream point logs.

Each stream ``(device, name)`` is one file ``<device>.<name>.pts`` of
16-byte little-endian ``(t f64, value f64)`` records.
"""

from __future__ import annotations

import difflib
import os
import re
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..flatfile import STREAM_UNITS

RECORD = struct.Struct("<dd")
RECORD_DTYPE = np.dtype([("t", "<f8"), ("v", "<f8")])
SUFFIX = ".pts"
MANIFEST = "manifest.txt"
MAX_GRID = 1_000_000
_NAME_RE = re.compile(r"^(\d+)\.([a-z_]+)\.pts$")


@dataclass(frozen=True, order=True)
class StreamKey:
    device_id: int
    stream: str

    def __str__(self) -> str:
        return f"{self.device_id}.{self.stream}"

    @classmethod
    def parse(cls, text: str) -> StreamKey:
        dev, dot, name = text.partition(".")
        if not dot or not dev.isdigit() or not name:
            raise ValueError(f"stream key must look like <device>.<stream>, got {text!r}")
        return cls(int(dev), name)

    @property
    def filename(self) -> str:
        return f"{self.device_id}.{self.stream}{SUFFIX}"


class UnknownStreamError(KeyError):
    def __init__(self, key: StreamKey | str, known: list[str]):
        self.key = str(key)
        self.known = known
        close = difflib.get_close_matches(self.key, known, n=3)
        hint = f"; did you mean {', '.join(close)}?" if close else ""
        super().__init__(f"unknown stream {self.key}{hint} (known: {', '.join(known) or 'none'})")

    def __str__(self) -> str:
        return self.args[0]


class ArchiveOrderError(ValueError):
    pass


class StreamArchive:
    """Writers append and ``flush()``; readers only ever see flushed records."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._files: dict[StreamKey, BinaryIO] = {}
        self._last: dict[StreamKey, tuple[float, float]] = {}
        self._pending: dict[StreamKey, list[bytes]] = {}
        for key in self._scan():
            self._recover(key)

    def _scan(self) -> list[StreamKey]:
        keys = []
        for p in self.root.iterdir():
            m = _NAME_RE.match(p.name)
            if m:
                keys.append(StreamKey(int(m.group(1)), m.group(2)))
        return sorted(keys)

    def _path(self, key: StreamKey) -> Path:
        return self.root / key.filename

    def _recover(self, key: StreamKey) -> None:
        """Drop a torn trailing record left by a crash and remember the last point."""
        path = self._path(key)
        size = path.stat().st_size
        whole = size - size % RECORD.size
        if whole != size:
            with open(path, "r+b") as f:
                f.truncate(whole)
        if whole:
            with open(path, "rb") as f:
                f.seek(whole - RECORD.size)
                self._last[key] = RECORD.unpack(f.read(RECORD.size))

    def streams(self) -> list[StreamKey]:
        with self._lock:
            return self._scan()

    def last_point(self, key: StreamKey) -> tuple[float, float] | None:
        return self._last.get(key)

    def append(self, key: StreamKey, t: float, v: float) -> None:
        last = self._last.get(key)
        if last is not None and t <= last[0]:
            raise ArchiveOrderError(f"{key}: timestamp {t} not after {last[0]}")
        self._pending.setdefault(key, []).append(RECORD.pack(t, v))
        self._last[key] = (t, v)

    def flush(self) -> int:
        """Write and fsync every pending record; returns how many."""
        n = 0
        with self._lock:
            for key, recs in self._pending.items():
                if not recs:
                    continue
                f = self._files.get(key)
                if f is None:
                    f = self._files[key] = open(self._path(key), "ab")
                f.write(b"".join(recs))
                f.flush()
                os.fsync(f.fileno())
                n += len(recs)
            self._pending.clear()
        return n

    def close(self) -> None:
        self.flush()
        with self._lock:
            for f in self._files.values():
                f.close()
            self._files.clear()

    def known(self) -> list[str]:
        return [str(k) for k in self.streams()]

    def read(self, key: StreamKey) -> np.ndarray:
        """All flushed records of a stream as a structured ``(t, v)`` array."""
        path = self._path(key)
        if not path.exists():
            raise UnknownStreamError(key, self.known())
        data = path.read_bytes()
        data = data[: len(data) - len(data) % RECORD.size]
        return np.frombuffer(data, dtype=RECORD_DTYPE)

    def query_raw(self, key: StreamKey, t0: float, t1: float) -> list[tuple[float, float]]:
        if t0 > t1:
            raise ValueError("t0 must be <= t1")
        arr = self.read(key)
        lo = np.searchsorted(arr["t"], t0, side="left")
        hi = np.searchsorted(arr["t"], t1, side="right")
        return [(float(t), float(v)) for t, v in arr[lo:hi]]

    def query_interpolated(
        self, key: StreamKey, t0: float, t1: float, interval_s: float
    ) -> list[tuple[float, float | None]]:
        if t0 > t1:
            raise ValueError("t0 must be <= t1")
        if interval_s <= 0:
            raise ValueError("interval_s must be > 0")
        arr = self.read(key)
        n = int(np.floor((t1 - t0) / interval_s + 1e-9)) + 1
        if n > MAX_GRID:
            raise ValueError(f"query would produce {n} rows (limit {MAX_GRID})")
        grid = t0 + np.arange(n) * interval_s
        if len(arr) == 0:
            return [(float(t), None) for t in grid]
        ts, vs = arr["t"], arr["v"]
        values = np.interp(grid, ts, vs)
        inside = (grid >= ts[0]) & (grid <= ts[-1])
        return [(float(t), float(v) if ok else None) for t, v, ok in zip(grid, values, inside)]

    def write_manifest(self) -> Path:
        lines = ["# stream\tunits\tpoints"]
        for key in self.streams():
            size = self._path(key).stat().st_size if self._path(key).exists() else 0
            lines.append(f"{key}\t{STREAM_UNITS.get(key.stream, '?')}\t{size // RECORD.size}")
        path = self.root / MANIFEST
        tmp = path.with_suffix(".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path

    def snapshot(self) -> dict[str, bytes]:
        """Raw bytes of every stream file, for byte-identity checks."""
        return {k.filename: self._path(k).read_bytes() for k in self.streams() if self._path(k).exists()}
