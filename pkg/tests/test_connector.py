import pytest
from hypothesis import given, strategies as st

from schaladb.connector import LocalConnector, distribute
from schaladb.errors import ConnectorDown, StoreUnavailable
from schaladb.model import RoleInstance
from schaladb.store.client import StoreSession
from schaladb.store.cluster import StoreCluster

from conftest import chain_workflow


def workers_at(nodes):
    return [RoleInstance("worker", str(i + 1), n) for i, n in enumerate(nodes)]


def connectors_at(nodes):
    return [RoleInstance("connector", f"c{i + 1}", n) for i, n in enumerate(nodes)]


class TestDistribute:
    def test_colocation_then_round_robin(self):
        cmap = distribute(workers_at(["n1", "n2", "n3"]), connectors_at(["n1", "n4"]))
        got = {b.worker: (b.primary, b.secondary) for b in cmap.bindings}
        assert got == {"1": ("c1", "c2"), "2": ("c2", "c1"), "3": ("c1", "c2")}

    def test_single_connector_gives_no_secondary(self):
        cmap = distribute(workers_at(["n1", "n2"]), connectors_at(["n9"]))
        assert all(b.primary == "c1" and b.secondary is None for b in cmap.bindings)
        assert cmap.warnings

    def test_full_colocation_is_identity(self):
        cmap = distribute(workers_at(["n1", "n2"]), connectors_at(["n1", "n2"]))
        got = {b.worker: b.primary for b in cmap.bindings}
        assert got == {"1": "c1", "2": "c2"}

    def test_deterministic(self):
        args = (workers_at(["n1", "n2", "n3", "n4"]), connectors_at(["n9", "n2"]))
        assert distribute(*args) == distribute(*args)

    @given(
        st.integers(min_value=1, max_value=12),
        st.integers(min_value=1, max_value=4),
        st.data(),
    )
    def test_non_colocated_load_within_one(self, n_workers, n_connectors, data):
        conn_nodes = [f"cn{i}" for i in range(n_connectors)]
        worker_nodes = [
            data.draw(st.sampled_from(conn_nodes + [f"wn{i}" for i in range(4)]))
            for i in range(n_workers)
        ]
        cmap = distribute(workers_at(worker_nodes), connectors_at(conn_nodes))
        colocated = {
            b.worker
            for b in cmap.bindings
            if cmap.connector_nodes[b.primary] == worker_nodes[int(b.worker) - 1]
        }
        loads = {c.ident: 0 for c in connectors_at(conn_nodes)}
        for b in cmap.bindings:
            if b.worker not in colocated:
                loads[b.primary] += 1
        assert max(loads.values()) - min(loads.values()) <= 1

    def test_secondary_is_next_in_cycle(self):
        cmap = distribute(workers_at(["x1", "x2", "x3"]), connectors_at(["y1", "y2", "y3"]))
        for b in cmap.bindings:
            assert b.secondary != b.primary


class TestFailover:
    def build(self):
        cluster = StoreCluster.create(W=1, D=1, replicate=False)
        cluster.execute("register_workflow", {"spec": chain_workflow(1).to_json()})
        c1 = LocalConnector("c1", cluster)
        c2 = LocalConnector("c2", cluster)
        session = StoreSession("w1", [c1, c2])
        return cluster, c1, c2, session

    def test_switch_to_secondary_and_stay(self):
        cluster, c1, c2, session = self.build()
        assert session.call("ping", {})["pong"]
        c1.kill()
        assert session.call("ping", {})["pong"]
        assert session.active_connector is c2
        # primary recovery does not flap the session back
        c1._killed.clear()
        session.call("ping", {})
        assert session.active_connector is c2

    def test_both_connectors_dead_is_terminal(self):
        cluster, c1, c2, session = self.build()
        c1.kill()
        c2.kill()
        with pytest.raises(StoreUnavailable):
            session.call("ping", {})

    def test_pending_claim_retried_once_after_switch(self):
        cluster, c1, c2, session = self.build()
        ids = cluster.execute(
            "seed_inputs", {"activity_id": "a1", "tuples": [{"fields": {"a": 1, "b": 2, "c": 3}}]}
        )["tuple_ids"]
        cluster.execute(
            "insert_tasks",
            {
                "tasks": [
                    {
                        "task_id": 1,
                        "activity_id": "a1",
                        "workflow_id": "wf-test",
                        "worker_id": 1,
                        "command_line": "/run",
                        "input_tuple_ids": [ids[0]],
                        "status": "READY",
                        "failure_trials": 0,
                        "std_out": "",
                    }
                ]
            },
        )
        c1.kill()
        tasks = session.claim_ready_tasks(1, 5)
        assert [t.task_id for t in tasks] == [1]
        rows = cluster.execute("snapshot", {"table": "work_queue"})["rows"]
        assert rows[0]["status"] == "RUNNING"

    def test_auto_promotion_on_data_node_death(self):
        cluster = StoreCluster.create(W=2, D=2, replicate=True)
        cluster.execute("register_workflow", {"spec": chain_workflow(1).to_json()})
        session = StoreSession("w2", [LocalConnector("c1", cluster)])
        cluster.execute("kill_node", {"node": "d2"})
        # the session notices the dead primary, promotes, and retries
        assert session.claim_ready_tasks(2, 1) == []
        placements = cluster.execute("placements", {})["placements"]
        assert all(p["primary"] == "d1" for p in placements)
