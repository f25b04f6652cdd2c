"""TCP listener turning report connections into spool files."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from .. import wire
from ..flatfile import format_line
from ..recordstore import RecordDecodeError, RecordDecoder
from .spool import Clock, SpoolConfig, SpoolWriter

log = logging.getLogger(__name__)

READ_TIMEOUT_S = 30.0


@dataclass
class ListenerStats:
    connections: int = 0
    rejected: int = 0
    files_written: int = 0
    lines_written: int = 0
    frames_dropped: int = 0
    records_dropped: int = 0
    acks_sent: int = 0
    refused_while_paused: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ConnectionSession:
    """Decoding state for one inbound connection. Feed it bytes; it answers
    with the bytes to send back (an ACK once END arrives), if any."""

    epoch: int = 0
    hello: wire.Hello | None = None
    lines: list[str] = field(default_factory=list)
    rejected: bool = False
    ended: bool = False
    records_dropped: int = 0
    end_count: int | None = None

    def __post_init__(self) -> None:
        self.frames = wire.FrameDecoder()
        self.records = RecordDecoder()

    def feed(self, chunk: bytes) -> bytes:
        reply = b""
        for payload in self.frames.feed(chunk):
            reply += self._payload(payload)
        return reply

    def _payload(self, payload: bytes) -> bytes:
        if self.rejected or self.ended:
            return b""
        if self.hello is None:
            try:
                self.hello = wire.decode_hello(payload)
            except wire.WireError as exc:
                self.rejected = True
                log.warning("connection rejected: %s", exc)
                return bytes([wire.NAK])
            return b""
        count = wire.decode_end(payload)
        if count is not None:
            self.ended = True
            self.end_count = count
            return b""
        try:
            data = self.records.decode_record(payload)
        except RecordDecodeError as exc:
            self.records_dropped += 1
            log.debug("record dropped: %s", exc)
            return b""
        if data is None:
            self.records_dropped += 1
            return b""
        try:
            msg = wire.decode_message(data)
        except wire.WireError as exc:
            self.records_dropped += 1
            log.debug("message dropped: %s", exc)
            return b""
        self.lines.append(format_line(msg, self.epoch))
        return b""

    @property
    def frames_dropped(self) -> int:
        return self.frames.dropped

    @property
    def device_id(self) -> int | None:
        return None if self.hello is None else self.hello.device_id


class Gateway:
    """Threaded listener writing one spool file per connection.

    ``pause()`` simulates an outage: connections are accepted and closed
    without an ACK, so nodes keep their buffers.
    """

    def __init__(self, config: SpoolConfig, clock: Clock = time.time):
        self.config = config
        self.writer = SpoolWriter(config.spool_root, clock)
        self.stats = ListenerStats()
        self._lock = threading.Lock()
        self._paused = threading.Event()
        self._server: socketserver.ThreadingTCPServer | None = None
        self._thread: threading.Thread | None = None
        Path(config.spool_root).mkdir(parents=True, exist_ok=True)

    def _count(self, **deltas: int) -> None:
        with self._lock:
            for k, v in deltas.items():
                setattr(self.stats, k, getattr(self.stats, k) + v)

    # outage control
    def pause(self) -> None:
        self._paused.set()

    def resume(self) -> None:
        self._paused.clear()

    @property
    def paused(self) -> bool:
        return self._paused.is_set()

    def handle(self, sock: socket.socket) -> Path | None:
        """Serve one connection to completion; returns the spool file, if any."""
        if self.paused:
            self._count(refused_while_paused=1)
            return None
        self._count(connections=1)
        session = ConnectionSession(epoch=self.config.epoch)
        sock.settimeout(READ_TIMEOUT_S)
        try:
            while not (session.ended or session.rejected):
                chunk = sock.recv(4096)
                if not chunk:
                    break
                reply = session.feed(chunk)
                if reply and session.rejected:
                    sock.sendall(reply)
        except OSError as exc:
            log.info("connection ended early: %s", exc)
        session.frames.finish()
        path = self._finish(session)
        if session.ended:
            try:
                sock.sendall(bytes([wire.ACK]))
                self._count(acks_sent=1)
            except OSError as exc:
                log.warning("could not ack device %s: %s", session.device_id, exc)
        return path

    def _finish(self, session: ConnectionSession) -> Path | None:
        self._count(frames_dropped=session.frames_dropped, records_dropped=session.records_dropped)
        if session.rejected or session.hello is None:
            self._count(rejected=1)
            return None
        if session.frames_dropped or session.records_dropped:
            log.warning(
                "device %d: %d frame(s) and %d record(s) dropped",
                session.device_id, session.frames_dropped, session.records_dropped,
            )
        if not session.ended:
            log.warning("device %d: stream ended without END, keeping %d decoded line(s)",
                        session.device_id, len(session.lines))
        if not session.lines:
            return None
        path = self.writer.write(session.hello.device_id, session.lines)
        self._count(files_written=1, lines_written=len(session.lines))
        log.debug("spooled %d line(s) to %s", len(session.lines), path)
        return path

    # server lifecycle
    def start(self) -> tuple[str, int]:
        gateway = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                gateway.handle(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server(self.config.listen, Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, name="gateway", daemon=True)
        self._thread.start()
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            return self.config.listen
        host, port = self._server.server_address[:2]
        return str(host), int(port)

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def serve_forever(self) -> None:
        self.start()
        assert self._thread is not None
        try:
            while self._thread.is_alive():
                self._thread.join(0.5)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
