"""Canonical form of a finished run for equality checks.

Task ids, tuple ids, and link ids bind to scheduling order, which races
between runs; worker/thread attribution and timestamps differ too. The
canonical form keys every task by (activity, its input field values) and
re-expresses provenance as value-level relations, so two runs of the same
seeded workload compare equal exactly when the same dataflow happened.
"""

from __future__ import annotations

import json


def canonical_state(session) -> dict:
    tasks = session.snapshot("work_queue")
    tuples = session.snapshot("domain_tuples")
    links = session.snapshot("prov_links")
    tuple_fields = {t["tuple_id"]: t["fields"] for t in tuples}

    def fields_of(tuple_ids):
        return [tuple_fields.get(t, {}) for t in sorted(tuple_ids)]

    task_keys = {}
    canon_tasks = []
    for row in tasks:
        key = _key(row["activity_id"], fields_of(row.get("input_tuple_ids", ())))
        task_keys[row["task_id"]] = key
        canon_tasks.append(
            {
                "key": key,
                "status": row["status"],
                "failure_trials": row["failure_trials"],
                "command_line": row["command_line"],
                "std_out": row["std_out"],
            }
        )
    canon_tasks.sort(key=lambda r: r["key"])

    canon_tuples = sorted(
        _key(t["activity_id"], [t["fields"]]) for t in tuples
    )
    canon_links = sorted(
        json.dumps(
            {
                "kind": link["kind"],
                "task": task_keys.get(link["task_id"], f"action:{link['task_id']}"),
                "tuple": _key("", [tuple_fields.get(link["tuple_id"], {})]),
            },
            sort_keys=True,
        )
        for link in links
    )
    return {"tasks": canon_tasks, "tuples": canon_tuples, "links": canon_links}


def _key(activity_id: str, field_maps) -> str:
    return json.dumps([activity_id, field_maps], sort_keys=True)


def digest(session) -> str:
    return json.dumps(canonical_state(session), sort_keys=True)
