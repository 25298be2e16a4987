"""Runtime steering: rewrite inputs of not-yet-run tasks, or prune them.

Both verbs touch only tasks that are READY at issue time, one atomic pass
per partition, and record a SteeringAction plus STEERED_BY provenance links
so every adaptation is itself traceable.
"""

from __future__ import annotations

from . import predicate as pred_mod
from .errors import StoreError
from .model import SteeringAction
from .store.client import StoreSession


def _workflow_activity(session: StoreSession, activity_id: str) -> dict:
    wf = session.meta_get("workflow")
    if not wf:
        raise StoreError("state", "no workflow registered")
    for act in wf.get("activities", []):
        if act["activity_id"] == activity_id:
            return act
    raise StoreError("unknown_activity", f"no such activity: {activity_id}")


def _partition_count(session: StoreSession) -> int:
    return session.call("placements", {})["W"]


def _run_action(
    session: StoreSession,
    kind: str,
    activity_id: str,
    predicate,
    assignments: dict | None,
    now: int | None,
) -> SteeringAction:
    activity = _workflow_activity(session, activity_id)
    assignments = dict(assignments or {})
    if kind == "UPDATE_INPUTS":
        schema = set(activity.get("input_schema", ()))
        unknown = sorted(set(assignments) - schema)
        if unknown:
            raise StoreError(
                "rejected", f"assignments to fields outside the input schema: {unknown}"
            )
        if not assignments:
            raise StoreError("rejected", "update steering needs at least one assignment")
    where = predicate.to_json() if hasattr(predicate, "to_json") else predicate
    action_id = session.call("alloc_action_id", {})["action_id"]
    issued_at = now if now is not None else session.now_ms()
    affected: list[int] = []
    for partition in range(1, _partition_count(session) + 1):
        result = session.call(
            "steer_partition",
            {
                "partition": partition,
                "action_id": action_id,
                "kind": kind,
                "activity_id": activity_id,
                "where": where,
                "assignments": assignments,
                "now": issued_at,
            },
        )
        affected.extend(result["affected_task_ids"])
    action = SteeringAction(
        action_id=action_id,
        kind=kind,
        activity_id=activity_id,
        predicate=where,
        assignments=assignments,
        issued_at=issued_at,
        affected_task_ids=tuple(sorted(affected)),
    )
    session.call("record_action", {"action": action.to_row()})
    return action


def steer_update_inputs(
    session: StoreSession,
    activity_id: str,
    predicate,
    assignments: dict,
    now: int | None = None,
) -> SteeringAction:
    """Replace matching input tuples of READY tasks with assigned copies and
    re-render their command lines."""
    return _run_action(session, "UPDATE_INPUTS", activity_id, predicate, assignments, now)


def steer_prune(
    session: StoreSession,
    activity_id: str,
    predicate,
    now: int | None = None,
) -> SteeringAction:
    """Abort matching READY tasks; downstream generation sees no tuples from
    them."""
    return _run_action(session, "PRUNE", activity_id, predicate, None, now)


def parse_predicate(text: str):
    return pred_mod.parse(text)
