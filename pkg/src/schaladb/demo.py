"""A canonical small work-queue snapshot used by tests, docs, and the
console's fixture server.

Twelve tasks across a three-activity chain on two workers, mid-run: four
FINISHED, four RUNNING, four READY. Timestamps are milliseconds from the
demo epoch (the run started at second 3). Every task carries one input
tuple holding exactly the parameters of its command line, so steering
predicates over ``a``/``b``/``c`` behave as the command lines suggest.
"""

from __future__ import annotations

from .model import WorkflowSpec
from .store.cluster import StoreCluster

DEMO_WORKFLOW = {
    "workflow_id": "wf-demo",
    "activities": [
        {
            "activity_id": "act1",
            "name": "stage one",
            "operator": "MAP",
            "command_template": "/run a={a} b={b} c={c}",
            "input_schema": ["a", "b", "c"],
            "output_schema": ["x", "y"],
            "mean_duration_ms": 55000,
            "synthetic_fn": "generic_map",
        },
        {
            "activity_id": "act2",
            "name": "stage two",
            "operator": "MAP",
            "command_template": "/run a={a} b={b} c={c}",
            "input_schema": ["a", "b", "c"],
            "output_schema": ["x", "y"],
            "mean_duration_ms": 14000,
            "synthetic_fn": "generic_map",
        },
        {
            "activity_id": "act3",
            "name": "stage three",
            "operator": "MAP",
            "command_template": "/run a={a} b={b} c={c}",
            "input_schema": ["a", "b", "c"],
            "output_schema": ["x", "y"],
            "mean_duration_ms": 14000,
            "synthetic_fn": "generic_map",
        },
    ],
    "edges": [["act1", "act2"], ["act2", "act3"]],
}

# (task_id, activity, worker, core, a, b, c, trials, std_out, start_s, end_s, status)
_ROWS = [
    (1, "act1", 1, 1, 1.3, 27.75, 16.21, 0, "x=18.71 y=6.77", 4, 58, "FINISHED"),
    (3, "act1", 1, 2, 0.67, 19.18, 24.26, 0, "x=4.58 y=0.39", 4, 59, "FINISHED"),
    (5, "act2", 1, 1, 1.9, 17.96, 23.92, None, "", 60, None, "RUNNING"),
    (7, "act2", 1, 2, 2.73, 35.74, 24.55, 0, "x=1.74 y=7.17", 59, 73, "FINISHED"),
    (9, "act3", 1, 1, 0.55, 29.48, 16.66, None, "", None, None, "READY"),
    (11, "act3", 1, 2, 2.6, 30.1, 13.66, None, "", 73, None, "RUNNING"),
    (2, "act1", 2, 1, 1.49, 6.64, 9.22, None, "", 4, None, "RUNNING"),
    (4, "act1", 2, 2, 0.17, 30.65, 12.61, 0, "x=8.08 y=8.5", 3, 64, "FINISHED"),
    (6, "act2", 2, 1, 0.54, 23.45, 24.57, None, "", None, None, "READY"),
    (8, "act2", 2, 2, 2.2, 13.87, 19.84, None, "", 65, None, "RUNNING"),
    (10, "act3", 2, 1, 0.48, 18.39, 16.79, None, "", None, None, "READY"),
    (12, "act3", 2, 2, 0.59, 15.67, 13.06, None, "", None, None, "READY"),
]

# A moment just after the last recorded event; windowed queries in tests
# inject this as "now".
DEMO_NOW_MS = 74_000


def demo_workflow() -> WorkflowSpec:
    return WorkflowSpec.from_json(DEMO_WORKFLOW)


def demo_rows() -> dict:
    """Fixture rows: tasks plus one input tuple per task (tuple id = 100 +
    task id, stored in the task's partition)."""
    tasks = []
    tuples = []
    for (tid, act, worker, core, a, b, c, trials, out, start, end, status) in _ROWS:
        tuple_id = 100 + tid
        tasks.append(
            {
                "task_id": tid,
                "activity_id": act,
                "workflow_id": "wf-demo",
                "worker_id": worker,
                "core_slot": core,
                "command_line": f"/run a={a} b={b} c={c}",
                "workspace": f"/data/{act}",
                "failure_trials": trials if trials is not None else 0,
                "std_out": out,
                "start_time": start * 1000 if start is not None else None,
                "end_time": end * 1000 if end is not None else None,
                "status": status,
                "input_tuple_ids": [tuple_id],
            }
        )
        tuples.append(
            {
                "tuple_id": tuple_id,
                "activity_id": act,
                "produced_by_task": None,
                "fields": {"a": a, "b": b, "c": c},
                "raw_file_path": None,
                "partition": worker,
            }
        )
    return {"tasks": tasks, "tuples": tuples, "links": []}


def build_demo_cluster(D: int = 1, replicate: bool = False) -> StoreCluster:
    cluster = StoreCluster.create(W=2, D=D, replicate=replicate)
    cluster.execute("register_workflow", {"spec": DEMO_WORKFLOW})
    cluster.execute("load_fixture_rows", demo_rows())
    cluster.execute("meta_put", {"key": "engine_state", "value": "RUNNING"})
    cluster.execute(
        "meta_put",
        {"key": "run", "value": {"workflow_id": "wf-demo", "started_ms": 3000}},
    )
    cluster.execute(
        "meta_put",
        {
            "key": "topology",
            "value": {
                "workers": {"1": "host-1", "2": "host-2"},
                "data_nodes": [f"d{i}" for i in range(1, D + 1)],
                "connectors": ["c1"],
                "threads_per_worker": 2,
            },
        },
    )
    return cluster
