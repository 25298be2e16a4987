"""The distributed in-memory store.

The work queue is hash-partitioned by worker id (one partition per worker);
domain tuples and provenance links are co-partitioned with the task that
produced them; workflow-input tuples and metadata are replicated to every
data node. Each partition has at most one replica on a different data node,
kept synchronous: a mutation is acknowledged only after the replica applied
the same change set.

Concurrency contract: all mutations of one partition are serialized by the
partition lock and applied in submission order; mutations on different
partitions proceed in parallel. Readers observe the last committed state of
each partition; there is no cross-partition snapshot.
"""

from __future__ import annotations

import heapq
import json
import os
import threading
import time

from .. import predicate as pred_mod
from ..errors import PartitionUnavailable, StoreError, StoreUnavailable
from ..model import Operator, TaskStatus, WorkflowSpec
from .partitioning import PartitionPlacement, allocate_partitions, partition_of

TABLES = ("work_queue", "domain_tuples", "prov_links", "metadata")

# Slots per task in the deterministic tuple-id layout: outputs take 0..7,
# steering replacements 8..15.
_TUPLE_SLOTS = 16
_OUTPUT_SLOTS = 8

ENGINE_STATES = ("INIT", "STORE_UP", "DB_CREATED", "RUNNING", "COMPLETE", "SHUTDOWN")


def _copy_row(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if isinstance(v, dict):
            out[k] = dict(v)
        elif isinstance(v, list):
            out[k] = list(v)
        else:
            out[k] = v
    return out


class PartitionData:
    """One partition's tables plus the indexes the scheduler relies on."""

    def __init__(self, partition_id: int):
        self.partition_id = partition_id
        self.tasks: dict[int, dict] = {}
        self.tuples: dict[int, dict] = {}
        self.links: dict[int, dict] = {}
        self.ready_heap: list[int] = []
        self.running: set[int] = set()
        self.status_counts: dict[str, int] = {s.value: 0 for s in TaskStatus}
        self.terminal_log: list[dict] = []
        self.link_seq = 0

    def canonical_bytes(self) -> bytes:
        return json.dumps(
            {
                "tasks": {str(k): self.tasks[k] for k in sorted(self.tasks)},
                "tuples": {str(k): self.tuples[k] for k in sorted(self.tuples)},
                "links": {str(k): self.links[k] for k in sorted(self.links)},
            },
            sort_keys=True,
        ).encode()

    def apply_changes(self, changes: dict) -> None:
        """Mechanical replay of a committed change set (used by replicas)."""
        for tid_s, row in changes.get("tasks", {}).items():
            self.tasks[int(tid_s)] = row
        for tid_s, row in changes.get("tuples", {}).items():
            self.tuples[int(tid_s)] = row
        for lid_s, row in changes.get("links", {}).items():
            self.links[int(lid_s)] = row
        self.link_seq = changes.get("link_seq", self.link_seq)
        # Replicas rebuild indexes only on promotion.

    def rebuild_indexes(self) -> None:
        self.ready_heap = [t for t, row in self.tasks.items() if row["status"] == "READY"]
        heapq.heapify(self.ready_heap)
        self.running = {t for t, row in self.tasks.items() if row["status"] == "RUNNING"}
        self.status_counts = {s.value: 0 for s in TaskStatus}
        for row in self.tasks.values():
            self.status_counts[row["status"]] += 1
        self.terminal_log = []
        terminal = sorted(
            (r for r in self.tasks.values() if r["status"] in ("FINISHED", "ABORTED")),
            key=lambda r: r["task_id"],
        )
        for i, row in enumerate(terminal):
            produced = sorted(
                t for t, tr in self.tuples.items()
                if tr.get("produced_by_task") == row["task_id"]
            )
            self.terminal_log.append(
                {
                    "seq": i + 1,
                    "task_id": row["task_id"],
                    "activity_id": row["activity_id"],
                    "status": row["status"],
                    "output_tuple_ids": produced,
                    "outputs": [
                        {"tuple_id": t, "fields": self.tuples[t]["fields"]} for t in produced
                    ],
                }
            )


class DataNodeState:
    def __init__(self, node_id: str):
        self.node_id = node_id
        self.alive = True
        self.primary: dict[int, PartitionData] = {}
        self.replica: dict[int, PartitionData] = {}


class StoreCluster:
    """In-process core shared by the local and TCP transports."""

    def __init__(self, data_node_ids: list[str] | None = None, clock=time.perf_counter):
        self._clock = clock
        self._epoch = clock()
        self.node_ids = list(data_node_ids or ["d1"])
        self.nodes: dict[str, DataNodeState] = {n: DataNodeState(n) for n in self.node_ids}
        self._created = False
        self.W = 0
        self.replicate = False
        self.placements: dict[int, PartitionPlacement] = {}
        self._placement_lock = threading.Lock()
        self._plocks: dict[int, threading.RLock] = {}
        self._meta: dict[str, object] = {"engine_state": "STORE_UP"}
        self._meta_lock = threading.Lock()
        self._inputs: dict[int, dict] = {}  # workflow inputs, replicated everywhere
        self._task_index: dict[int, int] = {}
        self._workflow: WorkflowSpec | None = None
        # Hook so the TCP deployment can carry replica change sets over the
        # wire; the default applies them in-process.
        self.peer_apply = self._local_peer_apply

        self._ops = {
            "ping": lambda p: {"pong": True, "now_ms": self.now_ms()},
            "setup_tables": self._op_setup_tables,
            "register_workflow": self._op_register_workflow,
            "seed_inputs": self._op_seed_inputs,
            "insert_tasks": self._op_insert_tasks,
            "claim_ready": self._op_claim_ready,
            "fetch_inputs": self._op_fetch_inputs,
            "get_tuples": self._op_get_tuples,
            "complete_task": self._op_complete_task,
            "fail_task": self._op_fail_task,
            "snapshot": self._op_snapshot,
            "status_counts": self._op_status_counts,
            "terminal_since": self._op_terminal_since,
            "expired_running": self._op_expired_running,
            "steer_partition": self._op_steer_partition,
            "record_action": self._op_record_action,
            "alloc_action_id": self._op_alloc_action_id,
            "derivation_path": self._op_derivation_path,
            "promote_replica": self._op_promote_replica,
            "kill_node": self._op_kill_node,
            "checkpoint": self._op_checkpoint,
            "meta_get": self._op_meta_get,
            "meta_put": self._op_meta_put,
            "meta_cas": self._op_meta_cas,
            "publish_metrics": self._op_publish_metrics,
            "access_metrics": self._op_access_metrics,
            "placements": self._op_placements,
            "dump_node": self._op_dump_node,
            "load_fixture_rows": self._op_load_fixture_rows,
            "apply_replica": self._op_apply_replica,
        }

    # ------------------------------------------------------------------ util

    @classmethod
    def create(cls, W: int, D: int, replicate: bool = True, clock=time.perf_counter):
        cluster = cls([f"d{i}" for i in range(1, D + 1)], clock=clock)
        cluster.execute("setup_tables", {"W": W, "replicate": replicate})
        return cluster

    def now_ms(self) -> int:
        return int((self._clock() - self._epoch) * 1000)

    def execute(self, op: str, payload: dict, via_node: str | None = None) -> dict:
        handler = self._ops.get(op)
        if handler is None:
            raise StoreError("bad_request", f"unknown op: {op}")
        if via_node is not None:
            node = self.nodes.get(via_node)
            if node is None:
                raise StoreError("bad_request", f"unknown data node: {via_node}")
            if not node.alive:
                raise StoreUnavailable(f"data node {via_node} is down", node=via_node)
        return handler(payload or {})

    def workflow(self) -> WorkflowSpec | None:
        return self._workflow

    def _require_created(self) -> None:
        if not self._created:
            raise StoreError("state", "database not created")

    def _primary_for(self, pid: int) -> DataNodeState:
        with self._placement_lock:
            pl = self.placements.get(pid)
            if pl is None:
                raise StoreError("bad_request", f"unknown partition: {pid}")
            node = self.nodes[pl.primary_data_node]
            replica = pl.replica_data_node
        if not node.alive:
            raise StoreUnavailable(
                f"data node {node.node_id} (primary of p{pid}) is down", node=node.node_id
            )
        return node

    def _replica_target(self, pid: int) -> str | None:
        with self._placement_lock:
            pl = self.placements[pid]
            return pl.replica_data_node

    def _local_peer_apply(self, node_id: str, pid: int, changes: dict) -> None:
        node = self.nodes[node_id]
        if not node.alive:
            return  # dead replica: partition continues unreplicated
        node.replica[pid].apply_changes(changes)

    def _mutate(self, pid: int, fn):
        """Runs ``fn(partition) -> (result, changes)`` serialized on the
        partition, then applies the change set to the replica before acking."""
        self._require_created()
        lock = self._plocks[pid]
        with lock:
            node = self._primary_for(pid)
            part = node.primary[pid]
            result, changes = fn(part)
            if changes:
                replica_node = self._replica_target(pid)
                if replica_node is not None:
                    wire = json.loads(json.dumps(changes))
                    self.peer_apply(replica_node, pid, wire)
        return result

    def _read(self, pid: int, fn):
        self._require_created()
        with self._plocks[pid]:
            node = self._primary_for(pid)
            return fn(node.primary[pid])

    def _partition_ids(self) -> list[int]:
        return list(range(1, self.W + 1))

    # ------------------------------------------------------------- lifecycle

    def _op_setup_tables(self, p: dict) -> dict:
        W = int(p["W"])
        replicate = bool(p.get("replicate", True))
        D = len(self.node_ids)
        placements, warnings = allocate_partitions(W, D, replicate)
        with self._placement_lock:
            self.W = W
            self.replicate = replicate
            self.placements = {}
            self._plocks = {}
            for node in self.nodes.values():
                node.primary.clear()
                node.replica.clear()
            for pl in placements:
                primary_id = self.node_ids[int(pl.primary_data_node[1:]) - 1]
                replica_id = (
                    self.node_ids[int(pl.replica_data_node[1:]) - 1]
                    if pl.replica_data_node
                    else None
                )
                remapped = PartitionPlacement(pl.partition_id, primary_id, replica_id)
                self.placements[pl.partition_id] = remapped
                self._plocks[pl.partition_id] = threading.RLock()
                self.nodes[primary_id].primary[pl.partition_id] = PartitionData(pl.partition_id)
                if replica_id:
                    self.nodes[replica_id].replica[pl.partition_id] = PartitionData(pl.partition_id)
            self._created = True
        self._inputs.clear()
        self._task_index.clear()
        with self._meta_lock:
            self._meta = {"engine_state": "DB_CREATED"}
        return {
            "partitions": [pl.to_json() for pl in self.placements.values()],
            "warnings": warnings,
        }

    def _op_register_workflow(self, p: dict) -> dict:
        self._require_created()
        spec = WorkflowSpec.from_json(p["spec"])
        self._workflow = spec
        with self._meta_lock:
            self._meta["workflow"] = spec.to_json()
            if "exec" in p:
                self._meta["exec"] = p["exec"]
        return {"workflow_id": spec.workflow_id}

    def _op_seed_inputs(self, p: dict) -> dict:
        """Workflow-input tuples; replicated to every data node by design."""
        self._require_created()
        activity_id = p["activity_id"]
        rows = p["tuples"]
        with self._meta_lock:
            base = int(self._meta.get("input_count", 0))
            created = []
            for i, item in enumerate(rows):
                fields = dict(item["fields"]) if "fields" in item else dict(item)
                raw = fields.get("raw_file_path") or item.get("raw_file_path")
                tid = base + i + 1
                self._inputs[tid] = {
                    "tuple_id": tid,
                    "activity_id": activity_id,
                    "produced_by_task": None,
                    "fields": fields,
                    "raw_file_path": raw,
                }
                created.append(tid)
            self._meta["input_count"] = base + len(rows)
        return {"tuple_ids": created}

    # ------------------------------------------------------------ scheduling

    def _op_insert_tasks(self, p: dict) -> dict:
        self._require_created()
        tasks = p["tasks"]
        if not tasks:
            return {"inserted": 0}
        wf = self._workflow
        by_pid: dict[int, list[dict]] = {}
        seen_ids: set[int] = set()
        for row in tasks:
            tid = row["task_id"]
            status = row.get("status", "READY")
            if status not in ("READY", "ABORTED"):
                raise StoreError("rejected", f"task {tid}: inserts must be READY (or ABORTED)")
            if tid in seen_ids:
                raise StoreError("duplicate_task", f"duplicate task_id in batch: {tid}")
            seen_ids.add(tid)
            if wf is not None:
                try:
                    wf.activity(row["activity_id"])
                except KeyError:
                    raise StoreError(
                        "rejected", f"task {tid}: unknown activity_id {row['activity_id']}"
                    )
            pid = partition_of(row["worker_id"], self.W)
            by_pid.setdefault(pid, []).append(row)
        # Validate against existing rows before touching anything, so a
        # rejected batch leaves the store unchanged.
        for pid, rows in by_pid.items():
            def check(part: PartitionData, rows=rows):
                for row in rows:
                    if row["task_id"] in part.tasks:
                        raise StoreError(
                            "duplicate_task", f"task_id already present: {row['task_id']}"
                        )
                return None
            self._read(pid, check)
        inserted = 0
        for pid in sorted(by_pid):
            rows = by_pid[pid]

            def fn(part: PartitionData, rows=rows):
                changes = {"tasks": {}}
                for row in rows:
                    if row["task_id"] in part.tasks:
                        raise StoreError(
                            "duplicate_task", f"task_id already present: {row['task_id']}"
                        )
                    stored = _copy_row(row)
                    part.tasks[row["task_id"]] = stored
                    part.status_counts[stored["status"]] += 1
                    if stored["status"] == "READY":
                        heapq.heappush(part.ready_heap, row["task_id"])
                    else:  # dead-on-arrival diagnostics (render failures)
                        part.terminal_log.append(
                            {
                                "seq": len(part.terminal_log) + 1,
                                "task_id": row["task_id"],
                                "activity_id": row["activity_id"],
                                "status": stored["status"],
                                "output_tuple_ids": [],
                            }
                        )
                    changes["tasks"][str(row["task_id"])] = stored
                return len(rows), changes

            inserted += self._mutate(pid, fn)
            with self._meta_lock:
                for row in rows:
                    self._task_index[row["task_id"]] = pid
        return {"inserted": inserted}

    def _op_claim_ready(self, p: dict) -> dict:
        self._require_created()
        worker_id = int(p["worker_id"])
        max_n = int(p.get("max_n", 1))
        if max_n < 1:
            raise StoreError("bad_request", "max_n must be >= 1")
        now = p.get("now")
        pid = partition_of(worker_id, self.W)

        def fn(part: PartitionData):
            t = self.now_ms() if now is None else int(now)
            claimed: list[dict] = []
            changes = {"tasks": {}}
            while part.ready_heap and len(claimed) < max_n:
                tid = heapq.heappop(part.ready_heap)
                row = part.tasks.get(tid)
                if row is None or row["status"] != "READY":
                    continue  # stale heap entry
                new_row = _copy_row(row)
                new_row["status"] = "RUNNING"
                new_row["start_time"] = t
                part.tasks[tid] = new_row
                part.running.add(tid)
                part.status_counts["READY"] -= 1
                part.status_counts["RUNNING"] += 1
                changes["tasks"][str(tid)] = new_row
                claimed.append(_copy_row(new_row))
            return claimed, (changes if claimed else None)

        return {"tasks": self._mutate(pid, fn)}

    def _find_task(self, task_id: int) -> tuple[int, dict]:
        pid = self._task_index.get(task_id)
        if pid is None:
            raise StoreError("unknown_task", f"no such task: {task_id}")
        row = self._read(pid, lambda part: part.tasks.get(task_id))
        if row is None:
            raise StoreError("unknown_task", f"no such task: {task_id}")
        return pid, row

    def _lookup_tuples(self, ids: list[int]) -> list[dict]:
        out = []
        for tid in ids:
            row = self._inputs.get(tid)
            if row is None:
                for pid in self._partition_ids():
                    row = self._read(pid, lambda part, tid=tid: part.tuples.get(tid))
                    if row is not None:
                        break
            if row is None:
                raise StoreError("unknown_tuple", f"no such tuple: {tid}")
            out.append(_copy_row(row))
        return out

    def _op_fetch_inputs(self, p: dict) -> dict:
        _, row = self._find_task(int(p["task_id"]))
        return {"tuples": self._lookup_tuples(list(row.get("input_tuple_ids", ())))}

    def _op_get_tuples(self, p: dict) -> dict:
        return {"tuples": self._lookup_tuples([int(t) for t in p["ids"]])}

    def _tuple_id_for(self, task_id: int, slot: int) -> int:
        with self._meta_lock:
            base = int(self._meta.get("input_count", 0))
        return base + (task_id - 1) * _TUPLE_SLOTS + slot + 1

    def _validate_outputs(self, row: dict, outputs: list[dict]) -> None:
        wf = self._workflow
        if wf is None:
            return
        try:
            act = wf.activity(row["activity_id"])
        except KeyError:
            return
        if act.operator is Operator.FILTER:
            if len(outputs) > 1:
                raise StoreError("rejected", "FILTER tasks emit at most one output tuple")
        elif len(outputs) != 1:
            raise StoreError(
                "rejected",
                f"{act.operator.value} tasks emit exactly one output tuple, got {len(outputs)}",
            )
        schema = set(act.output_schema)
        for out in outputs:
            keys = set(out["fields"])
            if keys != schema:
                raise StoreError(
                    "rejected",
                    f"output fields {sorted(keys)} do not match schema {sorted(schema)}",
                )

    def _op_complete_task(self, p: dict) -> dict:
        task_id = int(p["task_id"])
        std_out = p.get("std_out", "")
        outputs = p.get("outputs", [])
        now = p.get("now")
        pid, _ = self._find_task(task_id)

        def fn(part: PartitionData):
            row = part.tasks[task_id]
            if row["status"] == "FINISHED":
                # Idempotent replay: same payload acknowledges, anything else
                # is an illegal transition.
                prev_outputs = [
                    part.tuples[t]["fields"]
                    for t in sorted(part.tuples)
                    if part.tuples[t].get("produced_by_task") == task_id
                ]
                if row["std_out"] == std_out and prev_outputs == [o["fields"] for o in outputs]:
                    return {"acked": True, "already": True, "output_tuple_ids": []}, None
                raise StoreError("illegal_transition", f"task {task_id} already FINISHED")
            if row["status"] != "RUNNING":
                raise StoreError(
                    "illegal_transition",
                    f"cannot complete task {task_id} in status {row['status']}",
                )
            self._validate_outputs(row, outputs)
            t = self.now_ms() if now is None else int(now)
            changes = {"tasks": {}, "tuples": {}, "links": {}}
            # The transaction has three phases: the work-queue update, the
            # domain-tuple writes, and the provenance writes. Their measured
            # shares let clients book this one call across the matching
            # access categories.
            clock = self._clock
            t0 = clock()
            new_row = _copy_row(row)
            new_row["status"] = "FINISHED"
            new_row["end_time"] = t
            new_row["std_out"] = std_out
            if p.get("core_slot") is not None:
                new_row["core_slot"] = int(p["core_slot"])
            part.tasks[task_id] = new_row
            part.running.discard(task_id)
            part.status_counts["RUNNING"] -= 1
            part.status_counts["FINISHED"] += 1
            changes["tasks"][str(task_id)] = new_row
            t1 = clock()
            tuple_ids = []
            for j, out in enumerate(outputs):
                if j >= _OUTPUT_SLOTS:
                    raise StoreError("rejected", "too many output tuples for one task")
                tid = self._tuple_id_for(task_id, j)
                fields = dict(out["fields"])
                tup = {
                    "tuple_id": tid,
                    "activity_id": row["activity_id"],
                    "produced_by_task": task_id,
                    "fields": fields,
                    "raw_file_path": out.get("raw_file_path") or fields.get("raw_file_path"),
                }
                part.tuples[tid] = tup
                changes["tuples"][str(tid)] = tup
                tuple_ids.append(tid)
            t2 = clock()
            link_rows = []
            for tid in tuple_ids:
                link_rows.append({"kind": "GENERATED_BY", "task_id": task_id, "tuple_id": tid})
            for used in row.get("input_tuple_ids", ()):
                link_rows.append({"kind": "USED", "task_id": task_id, "tuple_id": used})
            for link in link_rows:
                part.link_seq += 1
                lid = (part.link_seq - 1) * self.W + part.partition_id
                link["link_id"] = lid
                part.links[lid] = link
                changes["links"][str(lid)] = link
            changes["link_seq"] = part.link_seq
            part.terminal_log.append(
                {
                    "seq": len(part.terminal_log) + 1,
                    "task_id": task_id,
                    "activity_id": row["activity_id"],
                    "status": "FINISHED",
                    "output_tuple_ids": tuple_ids,
                }
            )
            t3 = clock()
            entry = part.terminal_log[-1]
            entry["outputs"] = [
                {"tuple_id": tid, "fields": part.tuples[tid]["fields"]} for tid in tuple_ids
            ]
            return {
                "acked": True,
                "already": False,
                "output_tuple_ids": tuple_ids,
                "phase_ms": {
                    "task": (t1 - t0) * 1000.0,
                    "domain": (t2 - t1) * 1000.0,
                    "prov": (t3 - t2) * 1000.0,
                },
            }, changes

        return self._mutate(pid, fn)

    def _op_fail_task(self, p: dict) -> dict:
        task_id = int(p["task_id"])
        max_retries = int(p.get("max_retries", 3))
        now = p.get("now")
        diagnostic = p.get("std_out")
        pid, _ = self._find_task(task_id)

        def fn(part: PartitionData):
            row = part.tasks[task_id]
            if row["status"] != "RUNNING":
                raise StoreError(
                    "illegal_transition",
                    f"cannot fail task {task_id} in status {row['status']}",
                )
            t = self.now_ms() if now is None else int(now)
            new_row = _copy_row(row)
            new_row["failure_trials"] = row.get("failure_trials", 0) + 1
            part.running.discard(task_id)
            part.status_counts["RUNNING"] -= 1
            if diagnostic is not None:
                new_row["std_out"] = diagnostic
            if new_row["failure_trials"] < max_retries:
                new_row["status"] = "READY"
                new_row["start_time"] = None
                part.status_counts["READY"] += 1
                heapq.heappush(part.ready_heap, task_id)
            else:
                new_row["status"] = "ABORTED"
                new_row["end_time"] = t
                part.status_counts["ABORTED"] += 1
                part.terminal_log.append(
                    {
                        "seq": len(part.terminal_log) + 1,
                        "task_id": task_id,
                        "activity_id": row["activity_id"],
                        "status": "ABORTED",
                        "output_tuple_ids": [],
                    }
                )
            part.tasks[task_id] = new_row
            changes = {"tasks": {str(task_id): new_row}}
            return {"status": new_row["status"], "failure_trials": new_row["failure_trials"]}, changes

        return self._mutate(pid, fn)

    # ----------------------------------------------------------------- reads

    def _op_snapshot(self, p: dict) -> dict:
        table = p.get("table")
        if table not in TABLES:
            raise StoreError("unknown_table", f"unknown table: {table}")
        where = pred_mod.from_json(p.get("where"))
        rows: list[dict] = []
        if table == "metadata":
            with self._meta_lock:
                items = [{"key": k, "value": v} for k, v in sorted(self._meta.items())]
            return {"rows": [r for r in items if pred_mod.matches(where, r)]}
        self._require_created()
        if table == "domain_tuples":
            rows.extend(
                _copy_row(r) for r in self._inputs.values() if pred_mod.matches(where, r)
            )
        for pid in self._partition_ids():
            def scan(part: PartitionData):
                if table == "work_queue":
                    src = part.tasks
                elif table == "domain_tuples":
                    src = part.tuples
                else:
                    src = part.links
                return [_copy_row(r) for r in src.values() if pred_mod.matches(where, r)]

            rows.extend(self._read(pid, scan))
        key = {"work_queue": "task_id", "domain_tuples": "tuple_id", "prov_links": "link_id"}[table]
        rows.sort(key=lambda r: r[key])
        return {"rows": rows}

    def _op_status_counts(self, p: dict) -> dict:
        self._require_created()
        totals = {s.value: 0 for s in TaskStatus}
        per_worker: dict[str, dict] = {}
        per_activity: dict[str, dict] = {}
        for pid in self._partition_ids():
            def scan(part: PartitionData):
                worker_counts: dict[str, dict] = {}
                activity_counts: dict[str, dict] = {}
                for row in part.tasks.values():
                    w = str(row["worker_id"])
                    a = row["activity_id"]
                    worker_counts.setdefault(w, {s.value: 0 for s in TaskStatus})
                    worker_counts[w][row["status"]] += 1
                    activity_counts.setdefault(a, {s.value: 0 for s in TaskStatus})
                    activity_counts[a][row["status"]] += 1
                return dict(part.status_counts), worker_counts, activity_counts

            counts, workers, acts = self._read(pid, scan)
            for k, v in counts.items():
                totals[k] += v
            for w, c in workers.items():
                tgt = per_worker.setdefault(w, {s.value: 0 for s in TaskStatus})
                for k, v in c.items():
                    tgt[k] += v
            for a, c in acts.items():
                tgt = per_activity.setdefault(a, {s.value: 0 for s in TaskStatus})
                for k, v in c.items():
                    tgt[k] += v
        return {"totals": totals, "per_worker": per_worker, "per_activity": per_activity}

    def _op_terminal_since(self, p: dict) -> dict:
        self._require_created()
        cursors = {int(k): int(v) for k, v in (p.get("cursors") or {}).items()}
        out: dict[str, list[dict]] = {}
        next_cursors: dict[str, int] = {}
        for pid in self._partition_ids():
            after = cursors.get(pid, 0)

            def scan(part: PartitionData, after=after):
                fresh = [dict(e) for e in part.terminal_log[after:]]
                return fresh, len(part.terminal_log)

            fresh, seq = self._read(pid, scan)
            out[str(pid)] = fresh
            next_cursors[str(pid)] = seq
        return {"events": out, "cursors": next_cursors}

    def _op_expired_running(self, p: dict) -> dict:
        self._require_created()
        now = p.get("now")
        now = self.now_ms() if now is None else int(now)
        default_lease = int(p.get("default_lease_ms", 0))
        per_activity = {k: int(v) for k, v in (p.get("lease_by_activity") or {}).items()}
        expired: list[dict] = []
        for pid in self._partition_ids():
            def scan(part: PartitionData):
                found = []
                for tid in list(part.running):
                    row = part.tasks[tid]
                    lease = per_activity.get(row["activity_id"], default_lease)
                    if lease <= 0:
                        continue
                    start = row.get("start_time")
                    if start is not None and now - start > lease:
                        found.append({"task_id": tid, "activity_id": row["activity_id"]})
                return found

            expired.extend(self._read(pid, scan))
        return {"expired": expired, "now": now}

    # -------------------------------------------------------------- steering

    def _op_alloc_action_id(self, p: dict) -> dict:
        with self._meta_lock:
            n = int(self._meta.get("action_seq", 0)) + 1
            self._meta["action_seq"] = n
        return {"action_id": n}

    def _op_record_action(self, p: dict) -> dict:
        action = p["action"]
        with self._meta_lock:
            actions = self._meta.setdefault("steering_actions", [])
            actions.append(action)
        return {"recorded": True}

    def _op_steer_partition(self, p: dict) -> dict:
        """One partition's share of a steering action. Atomic per partition."""
        self._require_created()
        pid = int(p["partition"])
        kind = p["kind"]
        activity_id = p["activity_id"]
        where = pred_mod.from_json(p.get("where"))
        assignments = p.get("assignments") or {}
        action_id = int(p["action_id"])
        now = p.get("now")

        # Phase 1 (no partition lock held): find candidate tasks and fetch
        # their current input tuples, which may live on other partitions.
        def candidates(part: PartitionData):
            return [
                (row["task_id"], list(row.get("input_tuple_ids", ())))
                for row in part.tasks.values()
                if row["status"] == "READY" and row["activity_id"] == activity_id
            ]

        cands = self._read(pid, candidates)
        fetched: dict[int, dict] = {}
        for _, tuple_ids in cands:
            for tid in tuple_ids:
                if tid not in fetched:
                    try:
                        fetched[tid] = self._lookup_tuples([tid])[0]
                    except StoreError:
                        pass

        wf = self._workflow
        template = None
        if wf is not None:
            try:
                template = wf.activity(activity_id).command_template
            except KeyError:
                template = None

        def fn(part: PartitionData):
            from ..model import render_command

            t = self.now_ms() if now is None else int(now)
            changes = {"tasks": {}, "tuples": {}, "links": {}}
            affected: list[int] = []
            for task_id, _ in sorted(cands):
                row = part.tasks.get(task_id)
                if row is None or row["status"] != "READY":
                    continue  # claimed between phases; no longer steerable
                env = dict(row)
                tuples_here = [
                    fetched[tid] for tid in row.get("input_tuple_ids", ()) if tid in fetched
                ]
                for tup in tuples_here:
                    env.update(tup["fields"])
                if kind == "PRUNE":
                    if not tuples_here and not pred_mod.matches(where, env):
                        continue
                    if tuples_here and not any(
                        pred_mod.matches(where, {**row, **tup["fields"]}) for tup in tuples_here
                    ):
                        continue
                    new_row = _copy_row(row)
                    new_row["status"] = "ABORTED"
                    new_row["end_time"] = t
                    new_row["std_out"] = "pruned by steering"
                    part.tasks[task_id] = new_row
                    part.status_counts["READY"] -= 1
                    part.status_counts["ABORTED"] += 1
                    part.terminal_log.append(
                        {
                            "seq": len(part.terminal_log) + 1,
                            "task_id": task_id,
                            "activity_id": activity_id,
                            "status": "ABORTED",
                            "output_tuple_ids": [],
                        }
                    )
                    changes["tasks"][str(task_id)] = new_row
                    mark = row.get("input_tuple_ids", ())
                    if mark:
                        part.link_seq += 1
                        lid = (part.link_seq - 1) * self.W + part.partition_id
                        link = {
                            "link_id": lid,
                            "kind": "STEERED_BY",
                            "task_id": action_id,
                            "tuple_id": mark[0],
                        }
                        part.links[lid] = link
                        changes["links"][str(lid)] = link
                        changes["link_seq"] = part.link_seq
                    affected.append(task_id)
                    continue
                # UPDATE_INPUTS
                replaced = False
                new_ids = list(row.get("input_tuple_ids", ()))
                steer_slot = sum(
                    1 for tid in part.tuples
                    if part.tuples[tid].get("steered_from_task") == task_id
                )
                for i, tid in enumerate(list(new_ids)):
                    tup = fetched.get(tid)
                    if tup is None:
                        continue
                    if not pred_mod.matches(where, {**row, **tup["fields"]}):
                        continue
                    new_fields = dict(tup["fields"])
                    new_fields.update(assignments)
                    if new_fields == tup["fields"]:
                        continue  # no-op assignment; keep action idempotent
                    slot = _OUTPUT_SLOTS + steer_slot
                    if slot >= _TUPLE_SLOTS:
                        raise StoreError("rejected", f"too many steering updates for task {task_id}")
                    steer_slot += 1
                    new_tid = self._tuple_id_for(task_id, slot)
                    new_tup = {
                        "tuple_id": new_tid,
                        "activity_id": tup["activity_id"],
                        "produced_by_task": tup.get("produced_by_task"),
                        "fields": new_fields,
                        "raw_file_path": tup.get("raw_file_path"),
                        "steered_from_task": task_id,
                    }
                    part.tuples[new_tid] = new_tup
                    changes["tuples"][str(new_tid)] = new_tup
                    fetched[new_tid] = new_tup
                    new_ids[i] = new_tid
                    part.link_seq += 1
                    lid = (part.link_seq - 1) * self.W + part.partition_id
                    link = {
                        "link_id": lid,
                        "kind": "STEERED_BY",
                        "task_id": action_id,
                        "tuple_id": new_tid,
                    }
                    part.links[lid] = link
                    changes["links"][str(lid)] = link
                    changes["link_seq"] = part.link_seq
                    replaced = True
                if not replaced:
                    continue
                new_row = _copy_row(row)
                new_row["input_tuple_ids"] = new_ids
                if template is not None:
                    merged: dict = {}
                    for tid in new_ids:
                        tup = fetched.get(tid)
                        if tup:
                            merged.update(tup["fields"])
                    try:
                        new_row["command_line"] = render_command(template, merged)
                    except KeyError:
                        pass
                part.tasks[task_id] = new_row
                changes["tasks"][str(task_id)] = new_row
                affected.append(task_id)
            empty = not (changes["tasks"] or changes["tuples"] or changes["links"])
            return affected, (None if empty else changes)

        return {"affected_task_ids": self._mutate(pid, fn)}

    # ------------------------------------------------------------ provenance

    def _op_derivation_path(self, p: dict) -> dict:
        """Walks a tuple back to the workflow-input tuples that derived it."""
        start = int(p["tuple_id"])
        seen: set[int] = set()
        frontier = [start]
        hops: list[dict] = []
        roots: list[int] = []
        while frontier:
            tid = frontier.pop(0)
            if tid in seen:
                continue
            seen.add(tid)
            tup = self._lookup_tuples([tid])[0]
            producer = tup.get("produced_by_task")
            used: list[int] = []
            if producer is not None:
                try:
                    _, task_row = self._find_task(producer)
                    used = list(task_row.get("input_tuple_ids", ()))
                except StoreError:
                    used = []
            hops.append(
                {
                    "tuple_id": tid,
                    "activity_id": tup["activity_id"],
                    "produced_by_task": producer,
                    "used_tuple_ids": used,
                    "fields": tup["fields"],
                }
            )
            if producer is None:
                roots.append(tid)
            frontier.extend(u for u in used if u not in seen)
        return {"hops": hops, "input_roots": sorted(roots)}

    # ------------------------------------------------------------- liveness

    def _op_kill_node(self, p: dict) -> dict:
        node_id = p["node"]
        node = self.nodes.get(node_id)
        if node is None:
            raise StoreError("bad_request", f"unknown data node: {node_id}")
        with self._placement_lock:
            already = not node.alive
            node.alive = False
        return {"killed": node_id, "already_dead": already}

    def _op_promote_replica(self, p: dict) -> dict:
        failed = p["node"]
        node = self.nodes.get(failed)
        if node is None:
            raise StoreError("bad_request", f"unknown data node: {failed}")
        with self._placement_lock:
            node.alive = False
        promoted: list[int] = []
        lost_replica: list[int] = []
        for pid in self._partition_ids():
            with self._plocks[pid]:
                with self._placement_lock:
                    pl = self.placements[pid]
                    if pl.primary_data_node == failed:
                        if pl.replica_data_node is None or not self.nodes[pl.replica_data_node].alive:
                            raise PartitionUnavailable(
                                f"partition {pid} lost its primary on {failed} and has no live replica"
                            )
                        new_primary = self.nodes[pl.replica_data_node]
                        part = new_primary.replica.pop(pid)
                        part.rebuild_indexes()
                        new_primary.primary[pid] = part
                        self.placements[pid] = PartitionPlacement(
                            pid, pl.replica_data_node, None
                        )
                        promoted.append(pid)
                    elif pl.replica_data_node == failed:
                        self.placements[pid] = PartitionPlacement(
                            pid, pl.primary_data_node, None
                        )
                        lost_replica.append(pid)
        with self._placement_lock:
            placements = [pl.to_json() for pl in self.placements.values()]
        return {
            "promoted_partitions": promoted,
            "unreplicated_partitions": lost_replica,
            "placements": placements,
        }

    def _op_placements(self, p: dict) -> dict:
        with self._placement_lock:
            return {
                "W": self.W,
                "replicate": self.replicate,
                "placements": [pl.to_json() for pl in self.placements.values()],
                "nodes": {n.node_id: n.alive for n in self.nodes.values()},
            }

    # --------------------------------------------------------------- durable

    def _op_checkpoint(self, p: dict) -> dict:
        """Opt-in on-disk checkpoint: one JSON-lines file per node and table."""
        directory = p["dir"]
        os.makedirs(directory, exist_ok=True)
        written = []
        for node in self.nodes.values():
            if not node.alive:
                continue
            tables = {"work_queue": [], "domain_tuples": [], "prov_links": []}
            for pid in sorted(node.primary):
                with self._plocks[pid]:
                    part = node.primary[pid]
                    tables["work_queue"].extend(part.tasks[k] for k in sorted(part.tasks))
                    tables["domain_tuples"].extend(part.tuples[k] for k in sorted(part.tuples))
                    tables["prov_links"].extend(part.links[k] for k in sorted(part.links))
            tables["domain_tuples"] = [
                self._inputs[k] for k in sorted(self._inputs)
            ] + tables["domain_tuples"]
            with self._meta_lock:
                meta_rows = [{"key": k, "value": v} for k, v in sorted(self._meta.items())]
            for table, rows in list(tables.items()) + [("metadata", meta_rows)]:
                path = os.path.join(directory, f"{node.node_id}_{table}.jsonl")
                with open(path, "w", encoding="utf-8") as fh:
                    for row in rows:
                        fh.write(json.dumps(row, sort_keys=True) + "\n")
                written.append(path)
        return {"files": written}

    def _op_dump_node(self, p: dict) -> dict:
        node = self.nodes.get(p["node"])
        if node is None:
            raise StoreError("bad_request", f"unknown data node: {p['node']}")
        out = {"primary": {}, "replica": {}, "inputs": len(self._inputs)}
        for role, parts in (("primary", node.primary), ("replica", node.replica)):
            for pid, part in parts.items():
                with self._plocks[pid]:
                    out[role][str(pid)] = part.canonical_bytes().decode()
        return out

    # -------------------------------------------------------------- metadata

    def _op_meta_get(self, p: dict) -> dict:
        with self._meta_lock:
            return {"value": self._meta.get(p["key"])}

    def _op_meta_put(self, p: dict) -> dict:
        with self._meta_lock:
            self._meta[p["key"]] = p["value"]
        return {"stored": True}

    def _op_meta_cas(self, p: dict) -> dict:
        key, expected, new = p["key"], p.get("expected"), p.get("new")
        with self._meta_lock:
            current = self._meta.get(key)
            if json.dumps(current, sort_keys=True) == json.dumps(expected, sort_keys=True):
                self._meta[key] = new
                return {"swapped": True, "current": new}
            return {"swapped": False, "current": current}

    def _op_publish_metrics(self, p: dict) -> dict:
        with self._meta_lock:
            metrics = self._meta.setdefault("published_metrics", {})
            metrics[p["node"]] = p["totals"]
        return {"stored": True}

    def _op_access_metrics(self, p: dict) -> dict:
        with self._meta_lock:
            metrics = dict(self._meta.get("published_metrics", {}))
        nodes = [metrics[k] for k in sorted(metrics)]
        max_sum = max((n.get("total_ms", 0.0) for n in nodes), default=0.0)
        return {"nodes": nodes, "access_ms_maxsum": max_sum}

    # --------------------------------------------------------------- fixture

    def _op_load_fixture_rows(self, p: dict) -> dict:
        """Direct row loader for demo states and tests; replicates like any
        other committed batch."""
        self._require_created()
        for item in p.get("inputs", []):
            self._inputs[item["tuple_id"]] = _copy_row(item)
            with self._meta_lock:
                self._meta["input_count"] = max(
                    int(self._meta.get("input_count", 0)), item["tuple_id"]
                )
        by_pid: dict[int, dict] = {}
        for row in p.get("tasks", []):
            pid = partition_of(row["worker_id"], self.W)
            by_pid.setdefault(pid, {"tasks": [], "tuples": [], "links": []})["tasks"].append(row)
        for row in p.get("tuples", []):
            pid = row.get("partition") or partition_of(row.get("worker_id", 1), self.W)
            by_pid.setdefault(pid, {"tasks": [], "tuples": [], "links": []})["tuples"].append(row)
        for row in p.get("links", []):
            pid = row.get("partition", 1)
            by_pid.setdefault(pid, {"tasks": [], "tuples": [], "links": []})["links"].append(row)
        for pid, batch in sorted(by_pid.items()):
            def fn(part: PartitionData, batch=batch):
                changes = {"tasks": {}, "tuples": {}, "links": {}}
                for row in batch["tasks"]:
                    stored = _copy_row(row)
                    stored.pop("partition", None)
                    part.tasks[stored["task_id"]] = stored
                    part.status_counts[stored["status"]] += 1
                    if stored["status"] == "READY":
                        heapq.heappush(part.ready_heap, stored["task_id"])
                    elif stored["status"] == "RUNNING":
                        part.running.add(stored["task_id"])
                    else:
                        part.terminal_log.append(
                            {
                                "seq": len(part.terminal_log) + 1,
                                "task_id": stored["task_id"],
                                "activity_id": stored["activity_id"],
                                "status": stored["status"],
                                "output_tuple_ids": [],
                            }
                        )
                    changes["tasks"][str(stored["task_id"])] = stored
                for row in batch["tuples"]:
                    stored = _copy_row(row)
                    stored.pop("partition", None)
                    stored.pop("worker_id", None)
                    part.tuples[stored["tuple_id"]] = stored
                    changes["tuples"][str(stored["tuple_id"])] = stored
                for row in batch["links"]:
                    stored = _copy_row(row)
                    stored.pop("partition", None)
                    part.links[stored["link_id"]] = stored
                    changes["links"][str(stored["link_id"])] = stored
                return None, changes

            self._mutate(pid, fn)
            with self._meta_lock:
                for row in batch["tasks"]:
                    self._task_index[row["task_id"]] = pid
        return {"loaded": True}

    def _op_apply_replica(self, p: dict) -> dict:
        """Wire entry point for replica change sets (TCP deployments)."""
        pid = int(p["partition"])
        node = self.nodes[p["node"]]
        if node.alive:
            node.replica[pid].apply_changes(p["changes"])
        return {"applied": True}
