"""HTTP/JSON face of a running engine.

Stateless handlers over one store session: status, paged task listing,
query execution, steering, metrics, and provenance drill-down. Endpoints
live under /api/v1/; the unversioned /api/ aliases resolve to the same
handlers. Every response is a JSON object with an "ok" flag.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import predicate as pred_mod
from . import steering
from .errors import SchalaError, StoreError
from .queries import PREDEFINED, QueryService
from .store.client import StoreSession

API_VERSION = "v1"


class ServiceBackend:
    """Everything the handlers need, bound to one store session."""

    def __init__(self, session: StoreSession, registry=None):
        self.session = session
        self.registry = registry
        self.queries = QueryService(session)
        self.started = time.time()

    # -- endpoint bodies ----------------------------------------------------

    def status(self) -> dict:
        counts = self.session.call("status_counts", {})
        placements = self.session.call("placements", {})
        return {
            "engine_state": self.session.meta_get("engine_state") or "INIT",
            "run": self.session.meta_get("run"),
            "topology": self.session.meta_get("topology"),
            "tasks_by_status": counts["totals"],
            "per_worker": counts["per_worker"],
            "per_activity": counts["per_activity"],
            "partitions": placements["placements"],
            "data_nodes": placements["nodes"],
            "now_ms": self.session.now_ms(),
        }

    def tasks(self, status: str | None, activity: str | None, limit: int, after_id: int) -> dict:
        atoms = [{"atom": ["task_id", ">", after_id]}]
        if status:
            atoms.append({"atom": ["status", "=", status]})
        if activity:
            atoms.append({"atom": ["activity_id", "=", activity]})
        rows = self.session.snapshot("work_queue", {"and": atoms})
        page = rows[:limit]
        return {
            "tasks": page,
            "next_after_id": page[-1]["task_id"] if page else after_id,
            "has_more": len(rows) > limit,
        }

    def query(self, body: dict) -> dict:
        now = body.get("now")
        if "id" in body:
            qid = str(body["id"]).upper()
            if qid not in PREDEFINED:
                raise StoreError("bad_request", f"unknown query id: {qid}")
            result = self.queries.run_predefined(qid, body.get("params") or {}, now=now)
        elif "plan" in body:
            plan = _plan_from_json(body["plan"])
            result = self.queries.eval(plan, now=now)
        else:
            raise StoreError("bad_request", "query body needs an 'id' or a 'plan'")
        return {"result": result.to_json()}

    def steer(self, body: dict) -> dict:
        kind = body.get("kind")
        activity = body.get("activity")
        if not activity:
            raise StoreError("bad_request", "steer body needs an activity")
        where = body.get("where")
        if isinstance(where, str):
            pred = pred_mod.parse(where)
        else:
            pred = pred_mod.from_json(where)
        now = body.get("now")
        if kind == "update":
            action = steering.steer_update_inputs(
                self.session, activity, pred, body.get("set") or {}, now=now
            )
        elif kind == "prune":
            action = steering.steer_prune(self.session, activity, pred, now=now)
        else:
            raise StoreError("bad_request", "steer kind must be 'update' or 'prune'")
        return {"action": action.to_row()}

    def metrics(self) -> dict:
        stored = self.session.call("access_metrics", {})
        counts = self.session.call("status_counts", {})
        run = self.session.meta_get("run") or {}
        now = self.session.now_ms()
        started = run.get("started_ms")
        elapsed = (now - started) if started is not None else None
        finished = counts["totals"].get("FINISHED", 0)
        per_category = {}
        for node in stored["nodes"]:
            for cat, ms in node.get("per_category_ms", {}).items():
                per_category[cat] = per_category.get(cat, 0.0) + ms
        total = sum(per_category.values())
        return {
            "elapsed_ms": elapsed,
            "access_ms_maxsum": stored["access_ms_maxsum"],
            "per_node": stored["nodes"],
            "per_category_ms": per_category,
            "breakdown_pct": {
                k: (100.0 * v / total if total else 0.0) for k, v in per_category.items()
            },
            "tasks_by_status": counts["totals"],
            "throughput_tps": (finished / (elapsed / 1000.0)) if elapsed else 0.0,
        }

    def provenance(self, tuple_id: int) -> dict:
        return self.session.call("derivation_path", {"tuple_id": tuple_id})


def _plan_from_json(obj: dict):
    from .queries import GroupAgg, Join, Limit, OrderBy, Project, Select, Source

    kind = obj.get("op")
    if kind == "source":
        return Source(obj["table"], obj.get("where"))
    if kind == "select":
        return Select(_plan_from_json(obj["child"]), obj["where"])
    if kind == "project":
        return Project(_plan_from_json(obj["child"]), tuple(obj["columns"]))
    if kind == "join":
        return Join(
            _plan_from_json(obj["left"]),
            _plan_from_json(obj["right"]),
            tuple((a, b) for a, b in obj["on"]),
            right_prefix=obj.get("right_prefix", ""),
        )
    if kind == "group":
        return GroupAgg(
            _plan_from_json(obj["child"]),
            tuple(obj.get("keys", ())),
            tuple((f, c, a) for f, c, a in obj["aggs"]),
        )
    if kind == "order":
        return OrderBy(_plan_from_json(obj["child"]), tuple((c, bool(d)) for c, d in obj["keys"]))
    if kind == "limit":
        return Limit(_plan_from_json(obj["child"]), int(obj["n"]))
    raise StoreError("bad_request", f"unknown plan op: {kind}")


class _Handler(BaseHTTPRequestHandler):
    backend: ServiceBackend  # set by server factory
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # quiet by default
        pass

    # -- plumbing ------------------------------------------------------------

    def _send(self, code: int, body: dict) -> None:
        data = json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _ok(self, payload: dict) -> None:
        self._send(200, {"ok": True, **payload})

    def _fail(self, code: int, message: str, error_code: str = "error") -> None:
        self._send(code, {"ok": False, "error": {"code": error_code, "message": message}})

    def _route(self) -> tuple[str, dict]:
        parsed = urlparse(self.path)
        path = parsed.path
        for prefix in (f"/api/{API_VERSION}/", "/api/"):
            if path.startswith(prefix):
                return path[len(prefix):].rstrip("/"), parse_qs(parsed.query)
        return "", {}

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            body = json.loads(raw.decode("utf-8") or "{}")
        except (ValueError, UnicodeDecodeError) as exc:
            raise StoreError("bad_request", f"malformed body: {exc}")
        if not isinstance(body, dict):
            raise StoreError("bad_request", "body must be a JSON object")
        return body

    # -- methods --------------------------------------------------------------

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        route, qs = self._route()
        try:
            if route == "status":
                self._ok(self.backend.status())
            elif route == "tasks":
                self._ok(
                    self.backend.tasks(
                        status=(qs.get("status") or [None])[0],
                        activity=(qs.get("activity") or [None])[0],
                        limit=int((qs.get("limit") or ["100"])[0]),
                        after_id=int((qs.get("after_id") or ["0"])[0]),
                    )
                )
            elif route == "metrics":
                self._ok(self.backend.metrics())
            elif route == "provenance":
                if "tuple_id" not in qs:
                    return self._fail(400, "tuple_id query parameter required", "bad_request")
                self._ok(self.backend.provenance(int(qs["tuple_id"][0])))
            else:
                self._fail(404, f"no such endpoint: {self.path}", "not_found")
        except StoreError as exc:
            self._fail(_http_code(exc), exc.message, exc.code)
        except (SchalaError, ValueError) as exc:
            self._fail(400, str(exc), "bad_request")

    def do_POST(self):
        route, _ = self._route()
        try:
            body = self._body()
            if route == "query":
                self._ok(self.backend.query(body))
            elif route == "steer":
                self._ok(self.backend.steer(body))
            else:
                self._fail(404, f"no such endpoint: {self.path}", "not_found")
        except StoreError as exc:
            self._fail(_http_code(exc), exc.message, exc.code)
        except pred_mod.PredicateError as exc:
            self._fail(400, str(exc), "bad_request")
        except (SchalaError, ValueError) as exc:
            self._fail(400, str(exc), "bad_request")


def _http_code(exc: StoreError) -> int:
    if exc.code in ("unknown_activity", "unknown_task", "unknown_tuple", "not_found"):
        return 404
    if exc.code in ("store_unavailable", "partition_unavailable"):
        return 503
    return 400


class ApiServer:
    """Threaded HTTP server bound to one backend."""

    def __init__(self, backend: ServiceBackend, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"backend": backend})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self.httpd.serve_forever()
