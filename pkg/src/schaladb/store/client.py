"""Typed store access for one role instance.

A session times every call into its node's access timer, fails over from
its primary to its secondary connector when the broker stops answering
(sticky: no automatic fall-back), and triggers replica promotion when a
data node dies underneath it.
"""

from __future__ import annotations

import threading
import time

from ..errors import ConnectorDown, ConnectorsExhausted, StoreError, StoreUnavailable
from ..model import DomainTuple, Task
from .metrics import MetricsRegistry, category_for_op

_PUBLISH_EVERY_S = 0.5


class StoreSession:
    def __init__(
        self,
        node_id: str,
        connectors: list,
        registry: MetricsRegistry | None = None,
        worker_hint: int | None = None,
        auto_promote: bool = True,
        clock=time.perf_counter,
    ):
        if not connectors:
            raise StoreError("config", "session needs at least one connector")
        self.node_id = node_id
        self._handles = list(connectors)
        self._active = 0
        self._worker_hint = worker_hint
        self._auto_promote = auto_promote
        self.registry = registry or MetricsRegistry(clock)
        self.timer = self.registry.timer(node_id)
        self._clock = clock
        self._lock = threading.Lock()
        self._last_publish = clock()

    # ------------------------------------------------------------- plumbing

    @property
    def active_connector(self):
        return self._handles[self._active]

    def call(self, op: str, payload: dict | None = None) -> dict:
        t0 = self._clock()
        try:
            result = self._call_with_recovery(op, payload or {})
        except Exception:
            self.timer.record(category_for_op(op), (self._clock() - t0) * 1000.0)
            raise
        elapsed = (self._clock() - t0) * 1000.0
        self._book(op, elapsed, result)
        self._maybe_publish()
        return result

    def _book(self, op: str, elapsed_ms: float, result: dict) -> None:
        phases = result.get("phase_ms") if op == "complete_task" else None
        if not phases:
            self.timer.record(category_for_op(op), elapsed_ms)
            return
        # Split one completion transaction by the store-measured shares of
        # its phases; transport overhead spreads proportionally.
        store_total = sum(phases.values())
        if store_total <= 0:
            self.timer.record("complete_task", elapsed_ms)
            return
        domain = elapsed_ms * (phases["domain"] / store_total)
        prov = elapsed_ms * (phases["prov"] / store_total)
        self.timer.record("store_domain", domain)
        self.timer.record("store_prov", prov)
        self.timer.record("complete_task", elapsed_ms - domain - prov)

    def _call_with_recovery(self, op: str, payload: dict) -> dict:
        promoted = False
        while True:
            with self._lock:
                idx = self._active
            handle = self._handles[idx]
            try:
                return handle.send(op, payload)
            except ConnectorDown:
                with self._lock:
                    if self._active == idx and self._active + 1 < len(self._handles):
                        self._active += 1  # sticky switch to the secondary
                        continue
                    if self._active != idx:
                        continue  # another thread already switched
                raise ConnectorsExhausted(f"{self.node_id}: no connectors left")
            except StoreUnavailable as exc:
                if promoted or not self._auto_promote or not exc.node:
                    raise
                promoted = True
                try:
                    self._handles[self._active].send("promote_replica", {"node": exc.node})
                except (StoreError, ConnectorDown):
                    raise exc

    def _maybe_publish(self) -> None:
        now = self._clock()
        if now - self._last_publish < _PUBLISH_EVERY_S:
            return
        self._last_publish = now
        try:
            self._handles[self._active].send(
                "publish_metrics", {"node": self.node_id, "totals": self.timer.totals()}
            )
        except (StoreError, ConnectorDown):
            pass

    def publish_metrics(self) -> None:
        try:
            self.call("publish_metrics", {"node": self.node_id, "totals": self.timer.totals()})
        except (StoreError, ConnectorDown):
            pass

    # ----------------------------------------------------------- operations

    def claim_ready_tasks(self, worker_id: int, max_n: int, now: int | None = None) -> list[Task]:
        payload = {"worker_id": worker_id, "max_n": max_n}
        if now is not None:
            payload["now"] = now
        rows = self.call("claim_ready", payload)["tasks"]
        return [Task.from_row(r) for r in rows]

    def insert_tasks(self, tasks: list[Task]) -> int:
        return self.call("insert_tasks", {"tasks": [t.to_row() for t in tasks]})["inserted"]

    def fetch_task_inputs(self, task_id: int) -> list[DomainTuple]:
        payload = {"task_id": task_id}
        if self._worker_hint is not None:
            payload["worker_hint"] = self._worker_hint
        rows = self.call("fetch_inputs", payload)["tuples"]
        return [DomainTuple.from_row(r) for r in rows]

    def complete_task(
        self,
        task_id: int,
        std_out: str,
        outputs: list[DomainTuple | dict],
        now: int | None = None,
        core_slot: int | None = None,
    ) -> dict:
        payload_outputs = []
        for out in outputs:
            if isinstance(out, DomainTuple):
                payload_outputs.append(
                    {"fields": dict(out.fields), "raw_file_path": out.raw_file_path}
                )
            else:
                payload_outputs.append(out)
        payload = {"task_id": task_id, "std_out": std_out, "outputs": payload_outputs}
        if now is not None:
            payload["now"] = now
        if core_slot is not None:
            payload["core_slot"] = core_slot
        if self._worker_hint is not None:
            payload["worker_hint"] = self._worker_hint
        return self.call("complete_task", payload)

    def fail_task(
        self, task_id: int, max_retries: int, now: int | None = None, std_out: str | None = None
    ) -> str:
        payload = {"task_id": task_id, "max_retries": max_retries}
        if now is not None:
            payload["now"] = now
        if std_out is not None:
            payload["std_out"] = std_out
        if self._worker_hint is not None:
            payload["worker_hint"] = self._worker_hint
        return self.call("fail_task", payload)["status"]

    def snapshot(self, table: str, where: dict | None = None) -> list[dict]:
        return self.call("snapshot", {"table": table, "where": where})["rows"]

    def meta_get(self, key: str):
        return self.call("meta_get", {"key": key})["value"]

    def meta_put(self, key: str, value) -> None:
        self.call("meta_put", {"key": key, "value": value})

    def meta_cas(self, key: str, expected, new) -> dict:
        return self.call("meta_cas", {"key": key, "expected": expected, "new": new})

    def now_ms(self) -> int:
        return self.call("ping", {})["now_ms"]
