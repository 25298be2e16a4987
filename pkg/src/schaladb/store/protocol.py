"""Message framing shared by every transport.

Requests are JSON objects ``{"op", "req_id", "payload"}``; responses echo
``req_id`` with ``{"ok": true, "result": ...}`` or
``{"ok": false, "error": {"code", "message"}}``. One object per line.

The in-process transport round-trips payloads through the same encoder so
its message semantics (and per-call cost profile) match the TCP path.
"""

from __future__ import annotations

import itertools
import json
import threading

from ..errors import StoreError


def encode_request(op: str, req_id: int, payload: dict) -> bytes:
    return (json.dumps({"op": op, "req_id": req_id, "payload": payload}) + "\n").encode()


def encode_response(req_id: int, result: dict | None = None, error: dict | None = None) -> bytes:
    if error is not None:
        body = {"req_id": req_id, "ok": False, "error": error}
    else:
        body = {"req_id": req_id, "ok": True, "result": result}
    return (json.dumps(body) + "\n").encode()


def decode_line(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise StoreError("bad_request", f"malformed message: {exc}")
    if not isinstance(obj, dict):
        raise StoreError("bad_request", "message must be a JSON object")
    return obj


def handle_request_line(line: bytes, executor) -> bytes:
    """Parses one request line and runs it through ``executor(op, payload)``.

    Protocol errors answer with ok=false but keep the connection usable.
    """
    try:
        obj = decode_line(line)
    except StoreError as exc:
        return encode_response(-1, error=exc.to_wire())
    req_id = obj.get("req_id", -1)
    op = obj.get("op")
    if not isinstance(op, str):
        return encode_response(req_id, error={"code": "bad_request", "message": "missing op"})
    try:
        result = executor(op, obj.get("payload") or {})
        return encode_response(req_id, result=result)
    except StoreError as exc:
        return encode_response(req_id, error=exc.to_wire())
    except Exception as exc:  # defensive: never kill a serving thread
        return encode_response(req_id, error={"code": "internal", "message": repr(exc)})


class LocalTransport:
    """Direct in-process path to a cluster, with wire-identical semantics."""

    def __init__(self, cluster, via_node: str | None = None):
        self.cluster = cluster
        self.via_node = via_node
        self._ids = itertools.count(1)
        self._closed = threading.Event()

    def request(self, op: str, payload: dict) -> dict:
        if self._closed.is_set():
            raise StoreError("store_unavailable", "transport closed")
        req_id = next(self._ids)
        wire = decode_line(encode_request(op, req_id, payload))
        result = self.cluster.execute(wire["op"], wire["payload"], via_node=self.via_node)
        return json.loads(json.dumps(result))

    def close(self) -> None:
        self._closed.set()
