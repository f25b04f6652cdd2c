"""Per-day spool directories of flat files, with ``.sent`` marking."""

from __future__ import annotations

import logging
import os
import re
import shutil
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

log = logging.getLogger(__name__)

SENT_SUFFIX = ".sent"
_DAY_RE = re.compile(r"^\d{8}$")
_FILE_RE = re.compile(r"^(\d{6})_(\d+)_(\d+)\.txt$")

Clock = Callable[[], float]


@dataclass
class SpoolConfig:
    spool_root: Path
    listen: tuple[str, int] = ("127.0.0.1", 7400)
    retention_days: int = 10
    poll_interval_s: float = 30.0
    batch_size: int = 20
    epoch: int = 0  # added to message timestamps to get unix time

    def __post_init__(self) -> None:
        self.spool_root = Path(self.spool_root)
        if self.retention_days < 1:
            raise ValueError("retention_days must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.poll_interval_s <= 0:
            raise ValueError("poll_interval_s must be > 0")


@dataclass(frozen=True, order=True)
class SpoolFile:
    day: str
    hhmmss: str
    device_id: int
    seq: int
    path: Path

    @property
    def sent(self) -> bool:
        return self.path.name.endswith(SENT_SUFFIX)

    @property
    def transfer_name(self) -> str:
        """Flat, unique name used on the wire: ``YYYYMMDD_HHMMSS_dev_seq.txt``."""
        return f"{self.day}_{self.hhmmss}_{self.device_id}_{self.seq}.txt"


def parse_spool_path(path: Path) -> SpoolFile | None:
    name = path.name
    if name.endswith(SENT_SUFFIX):
        name = name[: -len(SENT_SUFFIX)]
    m = _FILE_RE.match(name)
    if m is None or not _DAY_RE.match(path.parent.name):
        return None
    return SpoolFile(path.parent.name, m.group(1), int(m.group(2)), int(m.group(3)), path)


def _day_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if p.is_dir() and _DAY_RE.match(p.name))


def list_spool(root: Path, include_sent: bool = False) -> list[SpoolFile]:
    """Spool files ordered oldest first by (day, time, device, seq)."""
    out = []
    for day in _day_dirs(Path(root)):
        for p in day.iterdir():
            f = parse_spool_path(p)
            if f is None or (f.sent and not include_sent):
                continue
            out.append(f)
    out.sort(key=lambda f: (f.day, f.hhmmss, f.device_id, f.seq, f.sent))
    return out


class SpoolWriter:
    """Writes one flat file per connection, named after the UTC creation time.

    Safe to call from many listener threads at once.
    """

    def __init__(self, root: Path, clock: Clock = time.time):
        self.root = Path(root)
        self.clock = clock
        self._lock = threading.Lock()
        self._seq: dict[tuple[str, str, int], int] = {}

    def _claim(self, day_dir: Path, day: str, hhmmss: str, device_id: int) -> Path:
        key = (day, hhmmss, device_id)
        seq = self._seq.get(key, 0)
        while True:
            path = day_dir / f"{hhmmss}_{device_id}_{seq}.txt"
            if not path.exists() and not path.with_name(path.name + SENT_SUFFIX).exists():
                self._seq[key] = seq + 1
                return path
            seq += 1

    def write(self, device_id: int, lines: list[str]) -> Path:
        now = datetime.fromtimestamp(self.clock(), tz=timezone.utc)
        day, hhmmss = now.strftime("%Y%m%d"), now.strftime("%H%M%S")
        day_dir = self.root / day
        day_dir.mkdir(parents=True, exist_ok=True)
        body = "".join(line + "\n" for line in lines)
        with self._lock:
            path = self._claim(day_dir, day, hhmmss, device_id)
            # the dot prefix keeps the temp file out of list_spool
            tmp = day_dir / f".{path.name}.tmp"
            tmp.write_text(body, encoding="utf-8")
            os.replace(tmp, path)
        return path


def mark_sent(path: Path) -> Path:
    target = path.with_name(path.name + SENT_SUFFIX)
    os.replace(path, target)
    return target


@dataclass
class PurgeResult:
    removed: list[str]
    unsent_dropped: int = 0
    errors: int = 0


def purge(config: SpoolConfig, now: float | None = None) -> PurgeResult:
    """Remove whole day directories whose age in days is >= retention_days."""
    now_dt = datetime.fromtimestamp(time.time() if now is None else now, tz=timezone.utc)
    today = now_dt.date()
    result = PurgeResult([])
    for day_dir in _day_dirs(config.spool_root):
        try:
            day = datetime.strptime(day_dir.name, "%Y%m%d").date()
        except ValueError:
            continue
        if (today - day).days < config.retention_days:
            continue
        unsent = [p for p in day_dir.iterdir() if p.name.endswith(".txt")]
        try:
            shutil.rmtree(day_dir)
        except OSError as exc:
            log.error("purge: could not remove %s: %s", day_dir, exc)
            result.errors += 1
            continue
        if unsent:
            log.warning("purge: %s held %d unsent file(s), dropped", day_dir.name, len(unsent))
        result.unsent_dropped += len(unsent)
        result.removed.append(day_dir.name)
    return result
