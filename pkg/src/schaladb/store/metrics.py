"""Store-access time accounting.

Every client node times each store call and books it under one category.
The workflow-level "time spent accessing the store" is the maximum over
nodes of that node's summed access time, since nodes run in parallel.
"""

from __future__ import annotations

import threading
import time

CATEGORIES = (
    "claim_ready",
    "fetch_inputs",
    "insert_tasks",
    "complete_task",
    "fail_task",
    "store_domain",
    "store_prov",
    "snapshot_query",
    "other",
)

_OP_CATEGORY = {
    "claim_ready": "claim_ready",
    "fetch_inputs": "fetch_inputs",
    "insert_tasks": "insert_tasks",
    "complete_task": "complete_task",
    "fail_task": "fail_task",
    "seed_inputs": "store_domain",
    "steer_partition": "store_prov",
    "record_action": "store_prov",
    "snapshot": "snapshot_query",
    "derivation_path": "snapshot_query",
}


def category_for_op(op: str) -> str:
    return _OP_CATEGORY.get(op, "other")


class AccessTimer:
    """Accumulates (duration ms, calls) per category for one node."""

    def __init__(self, node_id: str, clock=time.perf_counter):
        self.node_id = node_id
        self._clock = clock
        self._lock = threading.Lock()
        self._ms = {c: 0.0 for c in CATEGORIES}
        self._calls = {c: 0 for c in CATEGORIES}
        self._max_ms = 0.0

    def record(self, category: str, ms: float) -> None:
        if ms < 0:
            ms = 0.0
        if category not in self._ms:
            category = "other"
        with self._lock:
            self._ms[category] += ms
            self._calls[category] += 1
            if ms > self._max_ms:
                self._max_ms = ms

    def timed(self, category: str):
        return _Timed(self, category)

    def totals(self) -> dict:
        with self._lock:
            per = {c: self._ms[c] for c in CATEGORIES}
            max_ms = self._max_ms
        return {
            "node": self.node_id,
            "per_category_ms": per,
            "per_category_calls": dict(self._calls),
            "total_ms": sum(per.values()),
            "max_single_ms": max_ms,
        }


class _Timed:
    def __init__(self, timer: AccessTimer, category: str):
        self.timer = timer
        self.category = category

    def __enter__(self):
        self.t0 = self.timer._clock()
        return self

    def __exit__(self, *exc):
        ms = (self.timer._clock() - self.t0) * 1000.0
        self.timer.record(self.category, ms)
        return False


class MetricsRegistry:
    """All node timers of one engine run, plus the derived summary."""

    def __init__(self, clock=time.perf_counter):
        self._clock = clock
        self._lock = threading.Lock()
        self._timers: dict[str, AccessTimer] = {}

    def timer(self, node_id: str) -> AccessTimer:
        with self._lock:
            t = self._timers.get(node_id)
            if t is None:
                t = AccessTimer(node_id, self._clock)
                self._timers[node_id] = t
            return t

    def report(self) -> dict:
        with self._lock:
            timers = list(self._timers.values())
        nodes = [t.totals() for t in timers]
        nodes.sort(key=lambda n: n["node"])
        max_sum = max((n["total_ms"] for n in nodes), default=0.0)
        max_single = max((n["max_single_ms"] for n in nodes), default=0.0)
        per_category = {c: sum(n["per_category_ms"][c] for n in nodes) for c in CATEGORIES}
        total = sum(per_category.values())
        breakdown_pct = {
            c: (100.0 * per_category[c] / total if total > 0 else 0.0) for c in CATEGORIES
        }
        return {
            "nodes": nodes,
            "access_ms_maxsum": max_sum,
            "max_single_ms": max_single,
            "per_category_ms": per_category,
            "breakdown_pct": breakdown_pct,
        }
