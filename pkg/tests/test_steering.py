import json

import pytest

from schaladb.demo import DEMO_NOW_MS, build_demo_cluster
from schaladb.errors import StoreError
from schaladb.predicate import parse
from schaladb import steering

from conftest import session_for


class TestUpdateInputs:
    def test_demo_update_affects_ready_matches_only(self, demo_pair):
        cluster, session = demo_pair
        action = steering.steer_update_inputs(
            session, "act3", parse("a < 0.6"), {"a": 9.9}, now=DEMO_NOW_MS
        )
        assert action.affected_task_ids == (9, 10, 12)
        rows = {r["task_id"]: r for r in session.snapshot("work_queue")}
        for tid in (9, 10, 12):
            assert "a=9.9" in rows[tid]["command_line"]
        assert rows[11]["command_line"] == "/run a=2.6 b=30.1 c=13.66"  # RUNNING untouched

    def test_nothing_matches_gives_empty_action(self, demo_pair):
        _, session = demo_pair
        action = steering.steer_update_inputs(
            session, "act3", parse("a > 100"), {"a": 1.0}, now=DEMO_NOW_MS
        )
        assert action.affected_task_ids == ()

    def test_reissue_is_idempotent(self, demo_pair):
        _, session = demo_pair
        first = steering.steer_update_inputs(session, "act3", parse("a < 0.6"), {"a": 9.9})
        again = steering.steer_update_inputs(session, "act3", parse("a < 0.6"), {"a": 9.9})
        assert first.affected_task_ids == (9, 10, 12)
        assert again.affected_task_ids == ()

    def test_unknown_assignment_field_rejected_untouched(self, demo_pair):
        cluster, session = demo_pair
        before = cluster.execute("dump_node", {"node": "d1"})
        with pytest.raises(StoreError):
            steering.steer_update_inputs(session, "act3", parse("a < 0.6"), {"ghost": 1})
        assert cluster.execute("dump_node", {"node": "d1"}) == before

    def test_unknown_activity_rejected(self, demo_pair):
        _, session = demo_pair
        with pytest.raises(StoreError) as err:
            steering.steer_update_inputs(session, "nope", parse("a < 1"), {"a": 1})
        assert err.value.code == "unknown_activity"

    def test_non_ready_rows_bit_identical(self, demo_pair):
        cluster, session = demo_pair
        before = {
            r["task_id"]: json.dumps(r, sort_keys=True)
            for r in session.snapshot("work_queue")
            if r["status"] != "READY"
        }
        steering.steer_update_inputs(session, "act3", parse("a < 0.6"), {"a": 9.9})
        after = {
            r["task_id"]: json.dumps(r, sort_keys=True)
            for r in session.snapshot("work_queue")
            if r["status"] != "READY"
        }
        assert before == after

    def test_steered_by_links_and_action_row_recorded(self, demo_pair):
        cluster, session = demo_pair
        action = steering.steer_update_inputs(
            session, "act3", parse("a < 0.6"), {"a": 9.9}, now=DEMO_NOW_MS
        )
        links = [l for l in session.snapshot("prov_links") if l["kind"] == "STEERED_BY"]
        assert len(links) == 3
        assert all(l["task_id"] == action.action_id for l in links)
        new_tuples = {l["tuple_id"] for l in links}
        rows = {r["task_id"]: r for r in session.snapshot("work_queue")}
        for tid in (9, 10, 12):
            assert set(rows[tid]["input_tuple_ids"]) & new_tuples
        actions = session.meta_get("steering_actions")
        assert actions[-1]["action_id"] == action.action_id
        assert actions[-1]["affected_task_ids"] == [9, 10, 12]

    def test_claimed_after_steer_executes_with_assigned_values(self, demo_pair):
        cluster, session = demo_pair
        steering.steer_update_inputs(session, "act3", parse("a < 0.6"), {"a": 9.9})
        claimed = session.claim_ready_tasks(1, 1, now=DEMO_NOW_MS)
        task = claimed[0]
        assert task.task_id == 9
        assert "a=9.9" in task.command_line
        inputs = session.fetch_task_inputs(9)
        assert inputs[0].fields["a"] == 9.9


class TestPrune:
    def test_demo_prune(self, demo_pair):
        cluster, session = demo_pair
        action = steering.steer_prune(session, "act3", parse("a > 0.5"), now=DEMO_NOW_MS)
        assert action.affected_task_ids == (9, 12)
        rows = {r["task_id"]: r for r in session.snapshot("work_queue")}
        assert rows[9]["status"] == "ABORTED"
        assert rows[9]["std_out"] == "pruned by steering"
        assert rows[9]["end_time"] == DEMO_NOW_MS
        assert rows[12]["status"] == "ABORTED"
        assert rows[10]["status"] == "READY"
        assert rows[11]["status"] == "RUNNING"

    def test_prune_without_ready_tasks_is_empty(self, demo_pair):
        _, session = demo_pair
        action = steering.steer_prune(session, "act1", parse("a < 100"), now=DEMO_NOW_MS)
        assert action.affected_task_ids == ()

    def test_pruned_tasks_yield_no_downstream_tuples(self):
        # end-to-end: prune all of a3 before any a3 task runs in a paused
        # store, then confirm completion leaves them ABORTED with no outputs
        from schaladb.engine import Engine, EngineConfig, simple_topology
        from conftest import chain_workflow, SAMPLE_INPUTS
        import threading

        topo = simple_topology(W=2, D=1, C=1, threads=2, replicate=False)
        engine = Engine.local(topo, EngineConfig(poll_interval_ms=10, seed=3))
        workflow = chain_workflow(3, mean_ms=60)
        pruned = {}

        def steer_late():
            session = engine.make_client_session("steerer")
            import time
            for _ in range(500):
                rows = session.snapshot(
                    "work_queue",
                    {"and": [{"atom": ["activity_id", "=", "a3"]}, {"atom": ["status", "=", "READY"]}]},
                )
                if rows:
                    action = steering.steer_prune(session, "a3", parse("a >= 0"))
                    if action.affected_task_ids:
                        pruned["ids"] = action.affected_task_ids
                        return
                time.sleep(0.005)

        t = threading.Thread(target=steer_late)
        t.start()
        result = engine.run(workflow, SAMPLE_INPUTS)
        t.join(timeout=5)
        assert "ids" in pruned, "steering thread never caught a READY a3 task"
        session = engine.make_client_session("verify")
        rows = {r["task_id"]: r for r in session.snapshot("work_queue")}
        for tid in pruned["ids"]:
            assert rows[tid]["status"] == "ABORTED"
            produced = session.snapshot(
                "domain_tuples", {"atom": ["produced_by_task", "=", tid]}
            )
            assert produced == []
        others = [r for r in rows.values() if r["task_id"] not in pruned["ids"]]
        assert all(r["status"] == "FINISHED" for r in others)
        assert result.status_counts["ABORTED"] == len(pruned["ids"])
