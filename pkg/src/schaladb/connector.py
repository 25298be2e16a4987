"""Connectors: stateless brokers between clients and data nodes.

A connector routes each request to the data node owning the target
partition (metadata and multi-partition requests go to the lowest-id live
data node) and relays the response unchanged. Workers bind to a primary
connector (their co-located one if any, otherwise round-robin) and fail
over to a secondary, stickily, when the primary stops answering.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from .errors import ConnectorDown, StoreError, StoreUnavailable
from .store.partitioning import partition_of

# Ops whose payload names a worker id and therefore a single partition.
_WORKER_ROUTED = {"claim_ready"}
# Ops carrying an optional worker hint set by the issuing session.
_HINT_ROUTED = {"complete_task", "fail_task", "fetch_inputs"}


@dataclass(frozen=True)
class ConnectorBinding:
    worker: str
    primary: str
    secondary: str | None


@dataclass(frozen=True)
class ConnectorMap:
    bindings: tuple[ConnectorBinding, ...]
    connector_nodes: dict  # connector id -> physical node
    warnings: tuple[str, ...] = ()

    def for_worker(self, worker: str) -> ConnectorBinding:
        for b in self.bindings:
            if b.worker == worker:
                return b
        raise StoreError("bad_request", f"no connector binding for worker {worker}")


def distribute(workers, connectors) -> ConnectorMap:
    """Binds each worker to (primary, secondary) connectors.

    ``workers`` and ``connectors`` are sequences of objects with ``ident``
    and ``node`` attributes. Co-located pairs bind first; the rest cycle
    over connectors in id order, continuing the cycle past the slots the
    co-located bindings consumed so non-co-located load stays within one.
    """
    conn_ids = sorted(c.ident for c in connectors)
    if not conn_ids:
        raise StoreError("config", "need at least one connector")
    conn_nodes = {c.ident: c.node for c in connectors}
    node_to_conn: dict[str, str] = {}
    for cid in conn_ids:
        node_to_conn.setdefault(conn_nodes[cid], cid)
    primaries: dict[str, str] = {}
    remaining = []
    for w in sorted(workers, key=lambda w: _worker_sort_key(w.ident)):
        co = node_to_conn.get(w.node)
        if co is not None:
            primaries[w.ident] = co
        else:
            remaining.append(w.ident)
    cursor = len(primaries) % len(conn_ids)
    for wid in remaining:
        primaries[wid] = conn_ids[cursor]
        cursor = (cursor + 1) % len(conn_ids)
    warnings = []
    bindings = []
    for w in sorted(workers, key=lambda w: _worker_sort_key(w.ident)):
        primary = primaries[w.ident]
        if len(conn_ids) >= 2:
            nxt = (conn_ids.index(primary) + 1) % len(conn_ids)
            secondary = conn_ids[nxt]
        else:
            secondary = None
        bindings.append(ConnectorBinding(w.ident, primary, secondary))
    if len(conn_ids) < 2:
        warnings.append("single connector: workers have no secondary to fail over to")
    return ConnectorMap(tuple(bindings), conn_nodes, tuple(warnings))


def _worker_sort_key(ident: str):
    try:
        return (0, int(ident))
    except ValueError:
        return (1, ident)


class Router:
    """Shared routing brain for in-process and TCP connectors."""

    def __init__(self, send_to_node, fetch_placements):
        self._send = send_to_node
        self._fetch = fetch_placements
        self._lock = threading.Lock()
        self._placements: dict[int, str] = {}
        self._live: dict[str, bool] = {}
        self._W = 0

    def _refresh(self) -> None:
        info = self._fetch()
        with self._lock:
            self._W = info["W"]
            self._placements = {
                pl["partition_id"]: pl["primary"] for pl in info["placements"]
            }
            self._live = dict(info["nodes"])

    def _coordinator(self) -> str:
        with self._lock:
            live = sorted(n for n, ok in self._live.items() if ok)
        if not live:
            raise StoreUnavailable("no live data nodes")
        return live[0]

    def _target(self, op: str, payload: dict) -> str:
        wid = None
        if op in _WORKER_ROUTED:
            wid = payload.get("worker_id")
        elif op in _HINT_ROUTED:
            wid = payload.get("worker_hint")
        if wid is None:
            if not self._live:
                self._refresh()
            return self._coordinator()
        with self._lock:
            W = self._W
            placements = dict(self._placements)
        if not placements:
            self._refresh()
            with self._lock:
                W = self._W
                placements = dict(self._placements)
        pid = partition_of(int(wid), W)
        return placements[pid]

    def route(self, op: str, payload: dict) -> dict:
        if not isinstance(payload, dict):
            raise StoreError("bad_request", "payload must be an object")
        target = self._target(op, payload)
        try:
            return self._send(target, op, payload)
        except StoreUnavailable as exc:
            # The placement may have moved (promotion); refresh and retry a
            # single time against the new owner.
            failed = exc.node or target
            with self._lock:
                self._live[failed] = False
            self._refresh()
            retry_target = self._target(op, payload)
            if retry_target == target:
                raise
            return self._send(retry_target, op, payload)


class LocalConnector:
    """In-process broker over a cluster; ``kill()`` simulates a crash."""

    def __init__(self, connector_id: str, cluster, node: str = ""):
        self.connector_id = connector_id
        self.node = node
        self.cluster = cluster
        self._killed = threading.Event()
        self.router = Router(self._send, self._fetch)

    def _send(self, node_id: str, op: str, payload: dict) -> dict:
        return self.cluster.execute(op, payload, via_node=node_id)

    def _fetch(self) -> dict:
        return self.cluster.execute("placements", {})

    def kill(self) -> None:
        self._killed.set()

    @property
    def alive(self) -> bool:
        return not self._killed.is_set()

    def send(self, op: str, payload: dict) -> dict:
        if self._killed.is_set():
            raise ConnectorDown(f"connector {self.connector_id} is down")
        return self.router.route(op, payload)


class TcpConnectorServer:
    """TCP face of a connector: listens for clients, forwards to data nodes."""

    def __init__(self, connector_id: str, data_node_addrs: dict, host: str = "127.0.0.1", port: int = 0):
        from .store.tcp import NdjsonClient, NdjsonServer

        self.connector_id = connector_id
        self._addrs = dict(data_node_addrs)  # node id -> (host, port)
        self._clients: dict[str, NdjsonClient] = {}
        self._clients_lock = threading.Lock()
        self.router = Router(self._send, self._fetch)
        self.server = NdjsonServer(host, port, self._execute)

    @property
    def port(self) -> int:
        return self.server.port

    def start(self) -> None:
        self.server.start()

    def stop(self) -> None:
        self.server.stop()
        with self._clients_lock:
            for c in self._clients.values():
                c.close()

    def _client(self, node_id: str):
        from .store.tcp import NdjsonClient

        with self._clients_lock:
            c = self._clients.get(node_id)
            if c is None:
                host, port = self._addrs[node_id]
                c = NdjsonClient(host, port)
                self._clients[node_id] = c
            return c

    def _send(self, node_id: str, op: str, payload: dict) -> dict:
        try:
            return self._client(node_id).request(op, payload)
        except ConnectorDown as exc:
            raise StoreUnavailable(str(exc), node=node_id)

    def _fetch(self) -> dict:
        last_exc: Exception | None = None
        for node_id in sorted(self._addrs):
            try:
                return self._client(node_id).request("placements", {})
            except (ConnectorDown, StoreError) as exc:
                last_exc = exc
        raise StoreUnavailable(f"no data node answered placements: {last_exc}")

    def _execute(self, op: str, payload: dict) -> dict:
        return self.router.route(op, payload)
