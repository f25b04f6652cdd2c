"""Receiving end of the gateway's file push."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading

from ..transfer import ACK, NAK, TransferError, read_push
from .service import Historian

log = logging.getLogger(__name__)


class FileReceiver:
    """Accepts pushes one connection at a time and feeds them to a historian."""

    def __init__(self, historian: Historian, listen: tuple[str, int] = ("127.0.0.1", 7500)):
        self.historian = historian
        self.listen = listen
        self.received = 0
        self.refused = 0
        self._server: socketserver.TCPServer | None = None
        self._thread: threading.Thread | None = None

    def handle(self, sock: socket.socket) -> None:
        sock.settimeout(30.0)
        stream = sock.makefile("rb")
        try:
            while True:
                try:
                    push = read_push(stream)
                except (EOFError, TransferError, OSError) as exc:
                    log.info("push connection closed: %s", exc)
                    return
                if push is None:
                    return
                if not push.crc_ok:
                    log.warning("push %s failed its CRC, refused", push.name)
                    self.refused += 1
                    sock.sendall(NAK)
                    continue
                try:
                    report = self.historian.receive(push.name, push.body)
                except (OSError, ValueError) as exc:
                    log.error("push %s not stored: %s", push.name, exc)
                    self.refused += 1
                    sock.sendall(NAK)
                    continue
                self.received += 1
                log.debug("ingested %s: %d lines, %d archived", push.name, report.lines, report.archived)
                sock.sendall(ACK)
        finally:
            stream.close()

    def start(self) -> tuple[str, int]:
        receiver = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                receiver.handle(self.request)

        class Server(socketserver.TCPServer):
            allow_reuse_address = True

        self._server = Server(self.listen, Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, name="receiver", daemon=True)
        self._thread.start()
        return self.address

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            return self.listen
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
