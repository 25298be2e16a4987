"""Task generation and supervision.

The supervisor materializes tasks as their upstream data appears: MAP and
FILTER activities pipeline (one task per upstream output tuple as soon as
that tuple exists), REDUCE is a barrier (a single task once every upstream
activity is settled). Worker ids are assigned in a circle per activity so
every activity's batch balances within one task per worker.

A secondary supervisor watches the heartbeat row in the replicated metadata
table and takes over with a compare-and-set when it goes stale; generation
state is rebuilt from the store itself, so no task is ever materialized
twice across a failover.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from .errors import ConnectorDown, SchalaError, StoreError, StoreUnavailable
from .model import Operator, Task, TaskStatus, WorkflowSpec, render_command, topo_order
from .store.client import StoreSession

LEASE_KEY = "supervisor_lease"
CURSOR_KEY = "generation_cursor"


def assign_worker_ids(n: int, W: int, cursor_start: int = 1) -> list[int]:
    """Circular assignment: cursor_start, cursor_start+1, ... wrapping mod W."""
    if n < 0 or W < 1 or not (1 <= cursor_start <= W):
        raise SchalaError(f"bad assignment args n={n} W={W} start={cursor_start}")
    return [((cursor_start - 1 + i) % W) + 1 for i in range(n)]


@dataclass
class GenerationCursor:
    """Supervisor-side generation state; rebuildable from the store."""

    next_task_id: int = 1
    # Per-activity round-robin pointer (starts at worker 1 for each activity,
    # which keeps every activity batch balanced within one).
    next_worker: dict = field(default_factory=dict)
    # activity -> upstream tuple ids already materialized into tasks
    materialized: dict = field(default_factory=dict)
    # activity -> that activity's known output tuples [(tuple_id, fields)]
    outputs: dict = field(default_factory=dict)
    created: dict = field(default_factory=dict)
    terminal: dict = field(default_factory=dict)

    def pointer(self, activity_id: str) -> int:
        return self.next_worker.get(activity_id, 1)

    def scalars(self) -> dict:
        return {
            "next_task_id": self.next_task_id,
            "next_worker": dict(self.next_worker),
            "created": dict(self.created),
            "terminal": dict(self.terminal),
        }


@dataclass
class SupervisorConfig:
    poll_interval_ms: int = 250
    lease_factor: int = 10
    lease_floor_ms: int = 5000
    heartbeat_timeout_ms: int = 3000
    retry_max: int = 3
    workspace_root: str = "/data"


class Supervisor:
    def __init__(
        self,
        ident: str,
        session: StoreSession,
        workflow: WorkflowSpec,
        W: int,
        config: SupervisorConfig | None = None,
    ):
        self.ident = ident
        self.session = session
        self.workflow = workflow
        self.W = W
        self.config = config or SupervisorConfig()
        self.cursor = GenerationCursor()
        self.order = topo_order(workflow)
        self.upstreams = {a: workflow.upstream_of(a) for a in self.order}
        self.operators = {a.activity_id: a.operator for a in workflow.activities}
        self.inputs_by_activity: dict[str, list] = {}
        self.task_worker: dict[int, int] = {}
        self._terminal_cursors: dict[str, int] = {}
        self._terminal_seen: set[int] = set()
        self._lease_epoch = 0
        self._last_beat = 0
        self.complete = threading.Event()
        self.stopped = threading.Event()
        self.became_primary = threading.Event()
        self.crashed = threading.Event()
        self.error: Exception | None = None

    # ------------------------------------------------------------- bootstrap

    def bootstrap(self) -> None:
        """Rebuilds generation state from the store; safe after takeover."""
        # Read the feed position before snapshotting: anything that lands in
        # both is deduplicated through _terminal_seen.
        feed = self.session.call("terminal_since", {"cursors": {}})
        self._terminal_cursors = {k: v for k, v in feed["cursors"].items()}
        cur = GenerationCursor()
        for a in self.order:
            cur.materialized[a] = set()
            cur.outputs[a] = []
            cur.created[a] = 0
            cur.terminal[a] = 0
        all_tuples = self.session.snapshot("domain_tuples")
        tuple_rows = {row["tuple_id"]: row for row in all_tuples}
        inputs: dict[str, list] = {a: [] for a in self.order}
        for row in all_tuples:
            if row.get("produced_by_task") is None and row.get("steered_from_tuple") is None:
                if row["activity_id"] in inputs:
                    inputs[row["activity_id"]].append((row["tuple_id"], row["fields"]))
        for rows in inputs.values():
            rows.sort(key=lambda t: t[0])
        self.inputs_by_activity = inputs

        def original_id(tid: int) -> int:
            # Steering swaps a task's input for a replacement tuple; dedup has
            # to key on the tuple the task was originally generated from.
            seen = set()
            while tid in tuple_rows and tuple_rows[tid].get("steered_from_tuple") and tid not in seen:
                seen.add(tid)
                tid = tuple_rows[tid]["steered_from_tuple"]
            return tid

        tasks = self.session.snapshot("work_queue")
        max_id = 0
        self._terminal_seen = set()
        for row in tasks:
            aid = row["activity_id"]
            max_id = max(max_id, row["task_id"])
            self.task_worker[row["task_id"]] = row["worker_id"]
            if aid not in cur.created:
                continue
            cur.created[aid] += 1
            if row["status"] in ("FINISHED", "ABORTED"):
                cur.terminal[aid] += 1
                self._terminal_seen.add(row["task_id"])
            if self.operators[aid] is not Operator.REDUCE:
                for tid in row.get("input_tuple_ids", ()):
                    cur.materialized[aid].add(original_id(tid))
        for row in all_tuples:
            if row.get("produced_by_task") is not None and row.get("steered_from_tuple") is None:
                aid = row["activity_id"]
                if aid in cur.outputs:
                    cur.outputs[aid].append((row["tuple_id"], row["fields"]))
        for rows in cur.outputs.values():
            rows.sort(key=lambda t: t[0])
        cur.next_task_id = max_id + 1
        for a in self.order:
            cur.next_worker[a] = (cur.created[a] % self.W) + 1
        self.cursor = cur

    # ------------------------------------------------------------ generation

    def _consume_terminal_events(self) -> None:
        feed = self.session.call("terminal_since", {"cursors": self._terminal_cursors})
        self._terminal_cursors = feed["cursors"]
        events = []
        for rows in feed["events"].values():
            for e in rows:
                if e["task_id"] not in self._terminal_seen:
                    events.append(e)
        if not events:
            return
        events.sort(key=lambda e: e["task_id"])
        for e in events:
            self._terminal_seen.add(e["task_id"])
            aid = e["activity_id"]
            if aid not in self.cursor.terminal:
                continue
            self.cursor.terminal[aid] += 1
            if e["status"] == "FINISHED":
                for out in e.get("outputs", ()):
                    self.cursor.outputs[aid].append((out["tuple_id"], out["fields"]))

    def _pending(self, activity_id: str) -> int:
        return self.cursor.created[activity_id] - self.cursor.terminal[activity_id]

    def _upstream_pool(self, activity_id: str) -> list:
        ups = self.upstreams[activity_id]
        if not ups:
            return self.inputs_by_activity.get(activity_id, [])
        pool: list = []
        for u in ups:
            pool.extend(self.cursor.outputs[u])
        return pool

    def _fully_generated(self, activity_id: str) -> bool:
        op = self.operators[activity_id]
        if op is Operator.REDUCE:
            return self.cursor.created[activity_id] >= 1
        ups = self.upstreams[activity_id]
        if ups and not all(self._settled(u) for u in ups):
            return False
        pool = self._upstream_pool(activity_id)
        mat = self.cursor.materialized[activity_id]
        return all(tid in mat for tid, _ in pool)

    def _settled(self, activity_id: str) -> bool:
        return self._fully_generated(activity_id) and self._pending(activity_id) == 0

    def workflow_complete(self) -> bool:
        return all(self._settled(a) for a in self.order)

    def resolve_ready(self) -> int:
        """One generation pass; returns the number of tasks inserted."""
        self._consume_terminal_events()
        batch: list[Task] = []
        for aid in self.order:
            op = self.operators[aid]
            act = self.workflow.activity(aid)
            if op is Operator.REDUCE:
                ups = self.upstreams[aid]
                if self.cursor.created[aid] >= 1:
                    continue
                if ups and not all(self._settled(u) for u in ups):
                    continue
                pool = sorted(self._upstream_pool(aid), key=lambda t: t[0])
                batch.extend(self._make_tasks(act, [pool]))
            else:
                mat = self.cursor.materialized[aid]
                fresh = [
                    (tid, fields)
                    for tid, fields in self._upstream_pool(aid)
                    if tid not in mat
                ]
                if fresh:
                    fresh.sort(key=lambda t: t[0])
                    batch.extend(self._make_tasks(act, [[t] for t in fresh]))
        if not batch:
            return 0
        self.session.insert_tasks(batch)
        for t in batch:
            self.task_worker[t.task_id] = t.worker_id
        self.session.meta_put(CURSOR_KEY, self.cursor.scalars())
        return len(batch)

    def _make_tasks(self, act, input_groups: list[list]) -> list[Task]:
        """Turns groups of (tuple_id, fields) pairs into Task rows."""
        out = []
        aid = act.activity_id
        workers = assign_worker_ids(len(input_groups), self.W, self.cursor.pointer(aid))
        for group, worker in zip(input_groups, workers):
            task_id = self.cursor.next_task_id
            self.cursor.next_task_id += 1
            merged: dict = {}
            for _, fields in group:
                merged.update(fields)
            status = TaskStatus.READY
            std_out = ""
            try:
                command = render_command(act.command_template, merged)
            except KeyError as exc:
                command = act.command_template
                status = TaskStatus.ABORTED
                std_out = f"input rendering failed: missing field {exc}"
            task = Task(
                task_id=task_id,
                activity_id=aid,
                workflow_id=self.workflow.workflow_id,
                worker_id=worker,
                command_line=command,
                workspace=f"{self.config.workspace_root}/{aid}",
                input_tuple_ids=tuple(tid for tid, _ in group),
                status=status,
                std_out=std_out,
                end_time=None,
            )
            out.append(task)
            self.cursor.created[aid] += 1
            if self.operators[aid] is not Operator.REDUCE:
                for tid, _ in group:
                    self.cursor.materialized[aid].add(tid)
        self.cursor.next_worker[aid] = (self.cursor.pointer(aid) - 1 + len(input_groups)) % self.W + 1
        return out

    # ----------------------------------------------------------- lease logic

    def _lease_value(self, now: int) -> dict:
        return {"holder": self.ident, "beat_ms": now, "epoch": self._lease_epoch}

    def acquire_lease(self) -> bool:
        now = self.session.now_ms()
        current = self.session.meta_get(LEASE_KEY)
        if current is not None and current.get("holder") != self.ident:
            age = now - current.get("beat_ms", 0)
            if age <= self.config.heartbeat_timeout_ms:
                return False
        self._lease_epoch = (current or {}).get("epoch", 0) + 1
        swap = self.session.meta_cas(LEASE_KEY, current, self._lease_value(now))
        return bool(swap["swapped"])

    def heartbeat(self) -> bool:
        """Refreshes the lease; returns False if another holder took it."""
        now = self.session.now_ms()
        expected = self._lease_value(self._last_beat)
        new = self._lease_value(now)
        swap = self.session.meta_cas(LEASE_KEY, expected, new)
        if swap["swapped"]:
            self._last_beat = now
            return True
        current = swap.get("current") or {}
        return current.get("holder") == self.ident

    # ------------------------------------------------------------ main loops

    def _scan_expired(self) -> None:
        leases = {
            a.activity_id: max(
                self.config.lease_factor * a.mean_duration_ms, self.config.lease_floor_ms
            )
            for a in self.workflow.activities
        }
        found = self.session.call(
            "expired_running",
            {"lease_by_activity": leases, "default_lease_ms": self.config.lease_floor_ms},
        )["expired"]
        for row in found:
            try:
                self.session.call(
                    "fail_task",
                    {
                        "task_id": row["task_id"],
                        "max_retries": self.config.retry_max,
                        "std_out": "claim lease expired",
                        "worker_hint": self.task_worker.get(row["task_id"]),
                    },
                )
            except StoreError:
                pass  # finished in the meantime

    def run_primary(self, stop: threading.Event) -> None:
        """Generation loop; exits when the workflow completes or stop is set.

        The terminal-event feed runs every iteration (it drives pipelined
        generation); heartbeats refresh at a quarter of the takeover timeout
        and lease scans at a quarter of the lease floor, so supervision
        bookkeeping stays a sliver of the store traffic.
        """
        self.became_primary.set()
        poll_s = self.config.poll_interval_ms / 1000.0
        beat_every = max(1, self.config.heartbeat_timeout_ms // 4 // max(1, self.config.poll_interval_ms))
        scan_every = max(1, min(self.config.lease_floor_ms // 4, 1000) // max(1, self.config.poll_interval_ms))
        iteration = 0
        try:
            while not stop.is_set():
                if self.crashed.is_set():
                    return  # simulated crash: stop dead, leave the lease stale
                if iteration % beat_every == 0 and not self.heartbeat():
                    return  # lost the lease to a newer holder
                self.resolve_ready()
                if iteration % scan_every == 0:
                    self._scan_expired()
                if self.workflow_complete():
                    self.complete.set()
                    return
                iteration += 1
                stop.wait(poll_s)
        except (StoreUnavailable, ConnectorDown) as exc:
            self.error = exc
        except StoreError as exc:
            self.error = exc
        finally:
            self.stopped.set()

    def crash(self) -> None:
        self.crashed.set()

    def run_secondary(self, stop: threading.Event) -> None:
        """Hot standby: polls the heartbeat and takes over when it goes stale."""
        poll_s = max(self.config.heartbeat_timeout_ms / 4000.0, 0.05)
        try:
            while not stop.is_set():
                if self.takeover():
                    self.bootstrap()
                    self.run_primary(stop)
                    return
                stop.wait(poll_s)
        except (StoreUnavailable, ConnectorDown) as exc:
            self.error = exc
        finally:
            self.stopped.set()

    def takeover(self) -> bool:
        """CAS the stale lease over to this supervisor; False if it is fresh
        or another candidate won the race."""
        now = self.session.now_ms()
        current = self.session.meta_get(LEASE_KEY)
        if current is None:
            return False
        age = now - current.get("beat_ms", 0)
        if age <= self.config.heartbeat_timeout_ms:
            return False
        self._lease_epoch = current.get("epoch", 0) + 1
        swap = self.session.meta_cas(LEASE_KEY, current, self._lease_value(now))
        if swap["swapped"]:
            self._last_beat = now
            return True
        return False

    def start_primary(self, stop: threading.Event) -> threading.Thread:
        self.bootstrap()
        now = self.session.now_ms()
        self._lease_epoch += 1
        self.session.meta_put(LEASE_KEY, self._lease_value(now))
        self._last_beat = now
        thread = threading.Thread(target=self.run_primary, args=(stop,), daemon=True, name=f"supervisor-{self.ident}")
        thread.start()
        return thread

    def start_secondary(self, stop: threading.Event) -> threading.Thread:
        thread = threading.Thread(target=self.run_secondary, args=(stop,), daemon=True, name=f"supervisor-{self.ident}")
        thread.start()
        return thread
