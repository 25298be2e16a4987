"""Newline-delimited JSON over TCP: the store's network face.

Every role (data node, connector, CLI client, HTTP service) speaks the same
protocol; a server wraps an executor callable, a client pairs one request
with one response per call.
"""

from __future__ import annotations

import socket
import socketserver
import threading

from ..errors import ConnectorDown, StoreError
from . import protocol


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            try:
                line = self.rfile.readline()
            except OSError:
                return
            if not line:
                return
            if not line.strip():
                continue
            reply = protocol.handle_request_line(line, self.server.executor)
            try:
                self.wfile.write(reply)
                self.wfile.flush()
            except OSError:
                return


class NdjsonServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, host: str, port: int, executor):
        super().__init__((host, port), _Handler)
        self.executor = executor
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread:
            self._thread.join(timeout=5)


class NdjsonClient:
    """One persistent connection; requests serialized per connection."""

    def __init__(self, host: str, port: int, timeout_s: float = 2.0):
        self.host = host
        self.port = port
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._rfile = None
        self._req_id = 0

    def _connect(self) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def request(self, op: str, payload: dict) -> dict:
        with self._lock:
            self._req_id += 1
            req_id = self._req_id
            data = protocol.encode_request(op, req_id, payload)
            try:
                if self._sock is None:
                    self._connect()
                self._sock.sendall(data)
                line = self._rfile.readline()
            except (OSError, ValueError) as exc:
                self.close_locked()
                raise ConnectorDown(f"{self.host}:{self.port}: {exc}")
            if not line:
                self.close_locked()
                raise ConnectorDown(f"{self.host}:{self.port}: connection closed")
        obj = protocol.decode_line(line)
        if obj.get("ok"):
            return obj.get("result") or {}
        raise StoreError.from_wire(obj.get("error") or {})

    def close_locked(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._rfile = None

    def close(self) -> None:
        with self._lock:
            self.close_locked()


def serve_cluster_node(cluster, node_id: str, host: str = "127.0.0.1", port: int = 0) -> NdjsonServer:
    """Exposes one data node of a cluster over TCP."""

    def executor(op: str, payload: dict) -> dict:
        return cluster.execute(op, payload, via_node=node_id)

    server = NdjsonServer(host, port, executor)
    server.start()
    return server
