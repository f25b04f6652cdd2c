"""Forwards unsent spool files oldest first and marks them sent."""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Protocol

from ..transfer import ACK, TransferError, encode_push
from .spool import Clock, PurgeResult, SpoolConfig, list_spool, mark_sent, purge

log = logging.getLogger(__name__)


class TransferChannel(Protocol):
    def put(self, name: str, body: bytes) -> None:
        """Deliver one file completely or raise TransferError."""
        ...

    def close(self) -> None: ...


class TcpChannel:
    """File push over TCP. Puts within one round share a connection."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: socket.socket | None = None

    def put(self, name: str, body: bytes) -> None:
        try:
            if self._sock is None:
                self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            self._sock.sendall(encode_push(name, body))
            reply = self._sock.recv(1)
        except OSError as exc:
            self.close()
            raise TransferError(f"push of {name} failed: {exc}") from exc
        if reply != ACK:
            self.close()
            raise TransferError(f"push of {name} refused ({reply!r})")

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


@dataclass
class DistributeResult:
    files_sent: int = 0
    files_failed: int = 0
    deferred: int = 0
    backlog: int = 0  # unsent files left after the round


def distribute(config: SpoolConfig, channel: TransferChannel) -> DistributeResult:
    """One round: push up to ``batch_size`` of the oldest unsent files."""
    pending = list_spool(config.spool_root)
    batch = pending[: config.batch_size]
    result = DistributeResult()
    try:
        for i, f in enumerate(batch):
            try:
                body = f.path.read_bytes()
            except OSError as exc:
                log.error("cannot read %s: %s", f.path, exc)
                result.files_failed += 1
                continue
            try:
                channel.put(f.transfer_name, body)
            except TransferError as exc:
                log.info("distribute: %s; %d file(s) deferred", exc, len(batch) - i - 1)
                result.files_failed += 1
                result.deferred = len(batch) - i - 1
                break
            try:
                mark_sent(f.path)
            except OSError as exc:
                # delivered but still unsent-named: it will be pushed again
                log.error("SENT BUT NOT RENAMED %s: %s (duplicate push expected)", f.path, exc)
                continue
            result.files_sent += 1
    finally:
        channel.close()
    result.backlog = len(pending) - result.files_sent
    return result


@dataclass
class DistributorStats:
    rounds: int = 0
    files_sent: int = 0
    files_failed: int = 0
    saturation: int = 0  # rounds that ended with a larger backlog than the one before
    dirs_purged: int = 0
    unsent_purged: int = 0


class Distributor:
    """The sequential distribute-then-purge worker."""

    def __init__(self, config: SpoolConfig, channel: TransferChannel, clock: Clock = time.time):
        self.config = config
        self.channel = channel
        self.clock = clock
        self.stats = DistributorStats()
        self._last_backlog: int | None = None
        self._stop = threading.Event()

    def run_once(self) -> tuple[DistributeResult, PurgeResult]:
        res = distribute(self.config, self.channel)
        st = self.stats
        st.rounds += 1
        st.files_sent += res.files_sent
        st.files_failed += res.files_failed
        if self._last_backlog is not None and res.backlog > self._last_backlog:
            st.saturation += 1
            log.warning("distributor saturated: backlog grew %d -> %d", self._last_backlog, res.backlog)
        self._last_backlog = res.backlog
        pr = purge(self.config, self.clock())
        st.dirs_purged += len(pr.removed)
        st.unsent_purged += pr.unsent_dropped
        return res, pr

    def drain(self, max_rounds: int = 10_000) -> int:
        """Run rounds until nothing is left or a round makes no progress."""
        rounds = 0
        while rounds < max_rounds:
            res, _ = self.run_once()
            rounds += 1
            if res.backlog == 0 or res.files_sent == 0:
                break
        return rounds

    def run_forever(self) -> None:
        while not self._stop.is_set():
            try:
                self.run_once()
            except Exception:  # keep polling; the next round retries
                log.exception("distributor round failed")
            self._stop.wait(self.config.poll_interval_s)

    def stop(self) -> None:
        self._stop.set()
