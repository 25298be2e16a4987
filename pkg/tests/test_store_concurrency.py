"""Exactly-once claiming and partition isolation under real threads."""

import threading
from collections import Counter

from schaladb.store.cluster import StoreCluster
from schaladb.store.metrics import MetricsRegistry

from conftest import chain_workflow, session_for


def loaded_cluster(n_tasks=400, W=2):
    cluster = StoreCluster.create(W=W, D=1, replicate=False)
    cluster.execute("register_workflow", {"spec": chain_workflow(1).to_json()})
    ids = cluster.execute(
        "seed_inputs", {"activity_id": "a1", "tuples": [{"fields": {"a": 1, "b": 2, "c": 3}}]}
    )["tuple_ids"]
    rows = []
    for i in range(1, n_tasks + 1):
        rows.append(
            {
                "task_id": i,
                "activity_id": "a1",
                "workflow_id": "wf-test",
                "worker_id": (i - 1) % W + 1,
                "command_line": "/run",
                "input_tuple_ids": [ids[0]],
                "status": "READY",
                "failure_trials": 0,
                "std_out": "",
            }
        )
    cluster.execute("insert_tasks", {"tasks": rows})
    return cluster


class TestExactlyOnceClaim:
    def test_concurrent_claims_on_one_partition_are_disjoint(self):
        cluster = loaded_cluster(n_tasks=402, W=2)
        per_thread: list[list[int]] = []
        threads = []

        def claimer():
            mine: list[int] = []
            per_thread.append(mine)
            while True:
                out = cluster.execute("claim_ready", {"worker_id": 1, "max_n": 3, "now": 1})
                got = [t["task_id"] for t in out["tasks"]]
                if not got:
                    return
                mine.extend(got)

        for _ in range(8):
            threads.append(threading.Thread(target=claimer))
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        counts = Counter(tid for mine in per_thread for tid in mine)
        assert all(c == 1 for c in counts.values())
        # partition 1 holds the odd task ids
        assert sorted(counts) == [i for i in range(1, 403) if i % 2 == 1]

    def test_claims_touch_only_their_partition(self):
        cluster = loaded_cluster(n_tasks=40, W=2)
        cluster.execute("claim_ready", {"worker_id": 1, "max_n": 100, "now": 1})
        rows = cluster.execute("snapshot", {"table": "work_queue"})["rows"]
        for row in rows:
            expected = "RUNNING" if row["worker_id"] == 1 else "READY"
            assert row["status"] == expected

    def test_parallel_claims_across_partitions(self):
        cluster = loaded_cluster(n_tasks=200, W=4)
        results: dict[int, list[int]] = {}

        def claim_all(worker_id):
            got: list[int] = []
            while True:
                out = cluster.execute("claim_ready", {"worker_id": worker_id, "max_n": 5, "now": 1})
                ids = [t["task_id"] for t in out["tasks"]]
                if not ids:
                    break
                got.extend(ids)
            results[worker_id] = got

        threads = [threading.Thread(target=claim_all, args=(w,)) for w in (1, 2, 3, 4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        all_ids = [tid for ids in results.values() for tid in ids]
        assert len(all_ids) == 200
        assert len(set(all_ids)) == 200
        for worker_id, ids in results.items():
            assert all((tid - 1) % 4 + 1 == worker_id for tid in ids)


class TestConcurrentMixedLoad:
    def test_claims_completes_and_snapshots_interleave(self):
        cluster = loaded_cluster(n_tasks=300, W=3)
        registry = MetricsRegistry()
        errors: list[Exception] = []

        def work(worker_id):
            session = session_for(cluster, node=f"nw{worker_id}", registry=registry,
                                  worker_hint=worker_id)
            try:
                while True:
                    tasks = session.claim_ready_tasks(worker_id, 4)
                    if not tasks:
                        return
                    for t in tasks:
                        session.complete_task(
                            t.task_id, "x=1 y=2", [{"fields": {"x": 1, "y": 2}}]
                        )
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        def snapshotter():
            session = session_for(cluster, node="viewer", registry=registry)
            for _ in range(30):
                rows = session.snapshot("work_queue", {"atom": ["status", "=", "FINISHED"]})
                assert all(r["status"] == "FINISHED" for r in rows)

        threads = [threading.Thread(target=work, args=(w,)) for w in (1, 2, 3)]
        threads.append(threading.Thread(target=snapshotter))
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        rows = cluster.execute("snapshot", {"table": "work_queue"})["rows"]
        assert all(r["status"] == "FINISHED" for r in rows)
        report = registry.report()
        for node in report["nodes"]:
            assert node["total_ms"] >= 0
            assert sum(node["per_category_ms"].values()) == node["total_ms"]
