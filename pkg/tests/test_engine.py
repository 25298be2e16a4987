"""End-to-end engine runs, including fault injection."""

import threading
import time
from collections import Counter

import pytest

from schaladb.engine import Engine, EngineConfig, simple_topology
from schaladb.harness.canonical import digest
from schaladb.harness.workloads import WorkloadSpec, expected_task_count, generate_workload
from schaladb.model import Operator, WorkflowSpec

from conftest import SAMPLE_INPUTS, chain_workflow, make_activity


def run_engine(workflow, inputs, topo=None, config=None, hooks=None):
    topo = topo or simple_topology(W=2, D=1, C=1, threads=2, replicate=False)
    config = config or EngineConfig(poll_interval_ms=10, seed=3)
    engine = Engine.local(topo, config)
    if hooks:
        engine.on_execute = hooks
    result = engine.run(workflow, inputs)
    return engine, result


class TestHappyPath:
    def test_three_stage_chain_finishes_all(self):
        counts = Counter()
        engine, result = run_engine(chain_workflow(3), SAMPLE_INPUTS, hooks=lambda t: counts.update([t]))
        assert result.all_finished and result.n_tasks == 12
        assert all(v == 1 for v in counts.values()) and len(counts) == 12
        assert not result.errors

    def test_empty_input_set_completes_immediately(self):
        engine, result = run_engine(chain_workflow(3), [])
        assert result.n_tasks == 0
        assert not result.errors

    def test_reduce_final_runs_one_barrier_task(self):
        wf, inputs = generate_workload(
            WorkloadSpec(n_tasks=21, mean_task_ms=5, n_activities=7, operator_mix="reduce_final", seed=5)
        )
        engine, result = run_engine(wf, inputs)
        assert result.all_finished
        assert result.n_tasks == expected_task_count(wf, len(inputs))
        session = engine.make_client_session()
        reduce_rows = session.snapshot(
            "work_queue", {"atom": ["activity_id", "=", "a7"]}
        )
        assert len(reduce_rows) == 1
        assert len(reduce_rows[0]["input_tuple_ids"]) == 3

    def test_generation_count_matches_dag_oracle(self):
        wf, inputs = generate_workload(WorkloadSpec(n_tasks=35, mean_task_ms=5, n_activities=7, seed=8))
        engine, result = run_engine(wf, inputs)
        assert result.n_tasks == expected_task_count(wf, len(inputs))
        assert result.all_finished

    def test_reproducible_canonical_state_for_same_seed(self):
        spec = WorkloadSpec(n_tasks=30, mean_task_ms=5, n_activities=5, workers=2, threads=2, seed=42)
        digests = []
        for _ in range(2):
            wf, inputs = generate_workload(spec)
            topo = simple_topology(W=2, D=1, C=1, threads=2)
            engine, result = run_engine(wf, inputs, topo=topo,
                                        config=EngineConfig(poll_interval_ms=10, seed=42))
            assert result.all_finished
            digests.append(digest(engine.make_client_session()))
        assert digests[0] == digests[1]


class TestWorkerCrashRecovery:
    def test_lease_reset_reexecutes_on_restarted_worker(self):
        topo = simple_topology(W=1, D=1, C=1, threads=1, replicate=False)
        config = EngineConfig(
            poll_interval_ms=10, seed=3, lease_floor_ms=250, lease_factor=2
        )
        engine = Engine.local(topo, config)
        workflow = chain_workflow(1, mean_ms=150)
        crashed = {}

        def crash_then_restart():
            session = engine.make_client_session("chaos")
            for _ in range(400):
                rows = session.snapshot("work_queue", {"atom": ["status", "=", "RUNNING"]})
                if rows:
                    engine.kill_worker(1)
                    crashed["task"] = rows[0]["task_id"]
                    break
                time.sleep(0.005)
            time.sleep(0.4)  # let the lease expire while the worker is down
            engine.restart_worker(1)

        t = threading.Thread(target=crash_then_restart)
        t.start()
        result = engine.run(workflow, SAMPLE_INPUTS[:2])
        t.join(timeout=5)
        assert "task" in crashed
        assert result.all_finished
        session = engine.make_client_session("verify")
        rows = {r["task_id"]: r for r in session.snapshot("work_queue")}
        assert rows[crashed["task"]]["failure_trials"] >= 1
        assert rows[crashed["task"]]["std_out"].startswith("x=")


class TestConnectorFailover:
    def test_killing_one_connector_mid_run_still_completes_exactly_once(self):
        topo = simple_topology(W=2, D=1, C=2, threads=2, replicate=False)
        engine = Engine.local(topo, EngineConfig(poll_interval_ms=10, seed=11))
        counts = Counter()
        engine.on_execute = lambda t: counts.update([t])
        workflow = chain_workflow(3, mean_ms=30)
        killer = threading.Timer(0.15, lambda: engine.kill_connector("c1"))
        killer.start()
        result = engine.run(workflow, SAMPLE_INPUTS)
        killer.cancel()
        assert result.all_finished and result.n_tasks == 12
        session = engine.make_client_session("verify")
        rows = session.snapshot("work_queue")
        assert all(r["status"] == "FINISHED" for r in rows)
        # store-level exactly-once: one output tuple per map task
        for r in rows:
            produced = session.snapshot(
                "domain_tuples", {"atom": ["produced_by_task", "=", r["task_id"]]}
            )
            assert len(produced) == 1


class TestDataNodeFailover:
    def test_replica_promotion_preserves_every_committed_row(self):
        topo = simple_topology(W=4, D=2, C=2, threads=2, replicate=True)
        engine = Engine.local(topo, EngineConfig(poll_interval_ms=10, seed=13))
        workflow = chain_workflow(3, mean_ms=25)
        inputs = SAMPLE_INPUTS * 3  # 36 tasks
        committed_before_kill = {}

        def kill_one_data_node():
            session = engine.make_client_session("chaos")
            for _ in range(400):
                done = session.snapshot("work_queue", {"atom": ["status", "=", "FINISHED"]})
                if len(done) >= 6:
                    committed_before_kill["rows"] = {
                        r["task_id"]: r for r in done
                    }
                    engine.kill_data_node("d1")
                    return
                time.sleep(0.005)

        t = threading.Thread(target=kill_one_data_node)
        t.start()
        result = engine.run(workflow, inputs)
        t.join(timeout=5)
        assert "rows" in committed_before_kill, "never saw enough finished tasks"
        assert result.all_finished, result.status_counts
        session = engine.make_client_session("verify")
        after = {r["task_id"]: r for r in session.snapshot("work_queue")}
        for tid, row in committed_before_kill["rows"].items():
            assert after[tid]["status"] == "FINISHED"
            assert after[tid]["std_out"] == row["std_out"]
        placements = session.call("placements", {})
        assert all(p["primary"] == "d2" for p in placements["placements"])


class TestSupervisorFailover:
    def test_secondary_takes_over_and_final_state_matches_clean_run(self):
        spec_seed = 21
        workflow = chain_workflow(3, mean_ms=30)

        # clean reference run
        topo = simple_topology(W=2, D=1, C=1, threads=2)
        clean_engine, clean_result = run_engine(
            workflow, SAMPLE_INPUTS, topo=topo, config=EngineConfig(poll_interval_ms=10, seed=spec_seed)
        )
        assert clean_result.all_finished
        clean_digest = digest(clean_engine.make_client_session())

        # run with a supervisor crash mid-flight
        topo2 = simple_topology(W=2, D=1, C=1, threads=2, secondary_supervisor=True)
        config = EngineConfig(
            poll_interval_ms=10,
            seed=spec_seed,
            heartbeat_timeout_ms=150,
            run_secondary_supervisor=True,
        )
        engine = Engine.local(topo2, config)

        def crash_primary():
            session = engine.make_client_session("chaos")
            for _ in range(400):
                rows = session.snapshot("work_queue")
                if len(rows) >= 4 and any(r["status"] == "FINISHED" for r in rows):
                    engine.kill_primary_supervisor()
                    return
                time.sleep(0.005)

        t = threading.Thread(target=crash_primary)
        t.start()
        result = engine.run(workflow, SAMPLE_INPUTS)
        t.join(timeout=5)
        assert result.all_finished, result.status_counts
        assert engine.secondary is not None and engine.secondary.became_primary.is_set()
        assert digest(engine.make_client_session()) == clean_digest


class TestCentralizedMode:
    def test_same_finished_multiset_in_both_modes(self):
        workflow = chain_workflow(3, mean_ms=10)
        topo = simple_topology(W=2, D=1, C=1, threads=2)
        _, dist = run_engine(workflow, SAMPLE_INPUTS, topo=topo,
                             config=EngineConfig(poll_interval_ms=10, seed=9))
        central_engine, central = run_engine(
            workflow, SAMPLE_INPUTS, topo=simple_topology(W=2, D=1, C=1, threads=2),
            config=EngineConfig(poll_interval_ms=10, seed=9, mode="centralized"),
        )
        assert dist.all_finished and central.all_finished
        assert dist.n_tasks == central.n_tasks == 12
        session = central_engine.make_client_session("verify")
        rows = session.snapshot("work_queue")
        assert all(r["worker_id"] == 1 for r in rows)  # single partition

    def test_centralized_completion_requires_the_extra_ack(self):
        from schaladb.engine import CentralizedMaster, MasterChannel
        from schaladb.store.cluster import StoreCluster
        from schaladb.store.protocol import LocalTransport

        cluster = StoreCluster.create(W=1, D=1, replicate=False)
        cluster.execute("register_workflow", {"spec": chain_workflow(1).to_json()})
        ids = cluster.execute(
            "seed_inputs", {"activity_id": "a1", "tuples": [{"fields": {"a": 1, "b": 2, "c": 3}}]}
        )["tuple_ids"]
        cluster.execute(
            "insert_tasks",
            {
                "tasks": [
                    {
                        "task_id": 1, "activity_id": "a1", "workflow_id": "wf-test",
                        "worker_id": 1, "command_line": "/run", "input_tuple_ids": [ids[0]],
                        "status": "READY", "failure_trials": 0, "std_out": "",
                    }
                ]
            },
        )
        master = CentralizedMaster(LocalTransport(cluster))
        master.start()
        try:
            channel = MasterChannel(master)
            channel.send("claim_ready", {"worker_id": 1, "max_n": 1, "now": 1})
            # submit without the ack: the store must not have committed
            first = master.submit(
                "submit_result",
                {"task_id": 1, "std_out": "x=1 y=2", "outputs": [{"fields": {"x": 1, "y": 2}}]},
            )
            row = cluster.execute("snapshot", {"table": "work_queue"})["rows"][0]
            assert row["status"] == "RUNNING"
            master.submit("commit_result", {"ack_token": first["ack_token"]})
            row = cluster.execute("snapshot", {"table": "work_queue"})["rows"][0]
            assert row["status"] == "FINISHED"
        finally:
            master.stop()
