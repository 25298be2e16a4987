"""The newline-delimited JSON protocol, over real sockets."""

import json
import socket

import pytest

from schaladb.connector import TcpConnectorServer
from schaladb.errors import StoreError
from schaladb.store import protocol
from schaladb.store.cluster import StoreCluster
from schaladb.store.tcp import NdjsonClient, serve_cluster_node

from conftest import SAMPLE_INPUTS, chain_workflow


@pytest.fixture
def tcp_store():
    cluster = StoreCluster.create(W=2, D=2, replicate=True)
    cluster.execute("register_workflow", {"spec": chain_workflow(3).to_json()})
    servers = {n: serve_cluster_node(cluster, n) for n in cluster.node_ids}
    try:
        yield cluster, servers
    finally:
        for s in servers.values():
            s.stop()


class TestMessageFraming:
    def test_request_and_response_shapes(self):
        line = protocol.encode_request("ping", 7, {"x": 1})
        obj = json.loads(line)
        assert obj == {"op": "ping", "req_id": 7, "payload": {"x": 1}}
        ok = json.loads(protocol.encode_response(7, result={"pong": True}))
        assert ok == {"req_id": 7, "ok": True, "result": {"pong": True}}
        err = json.loads(protocol.encode_response(7, error={"code": "x", "message": "m"}))
        assert err["ok"] is False and err["error"]["code"] == "x"

    def test_malformed_line_becomes_error_response(self):
        reply = json.loads(protocol.handle_request_line(b"{not json", lambda op, p: {}))
        assert reply["ok"] is False
        assert reply["error"]["code"] == "bad_request"

    def test_store_errors_travel_with_their_code(self):
        def executor(op, payload):
            raise StoreError("unknown_task", "nope")

        reply = json.loads(protocol.handle_request_line(
            protocol.encode_request("fetch_inputs", 1, {}), executor))
        assert reply["error"]["code"] == "unknown_task"


class TestTcpRoundTrip:
    def test_ops_over_sockets(self, tcp_store):
        cluster, servers = tcp_store
        client = NdjsonClient("127.0.0.1", servers["d1"].port)
        assert client.request("ping", {})["pong"] is True
        ids = client.request(
            "seed_inputs",
            {"activity_id": "a1", "tuples": [{"fields": f} for f in SAMPLE_INPUTS]},
        )["tuple_ids"]
        client.request(
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
        out = client.request("claim_ready", {"worker_id": 1, "max_n": 1, "now": 4})
        assert [t["task_id"] for t in out["tasks"]] == [1]
        client.close()

    def test_malformed_message_keeps_connection_open(self, tcp_store):
        _, servers = tcp_store
        sock = socket.create_connection(("127.0.0.1", servers["d1"].port))
        sock.sendall(b"this is not json\n")
        reply = json.loads(sock.makefile("rb").readline())
        assert reply["ok"] is False
        sock.sendall(protocol.encode_request("ping", 2, {}))
        reply2 = json.loads(sock.makefile("rb").readline())
        assert reply2["ok"] is True
        sock.close()

    def test_wrong_node_liveness(self, tcp_store):
        cluster, servers = tcp_store
        cluster.execute("kill_node", {"node": "d1"})
        client = NdjsonClient("127.0.0.1", servers["d1"].port)
        with pytest.raises(StoreError) as err:
            client.request("ping", {})
        assert err.value.code == "store_unavailable"
        client.close()


class TestTcpConnector:
    def test_routes_to_owning_node_and_survives_promotion(self, tcp_store):
        cluster, servers = tcp_store
        addrs = {n: ("127.0.0.1", s.port) for n, s in servers.items()}
        connector = TcpConnectorServer("c1", addrs)
        connector.start()
        try:
            client = NdjsonClient("127.0.0.1", connector.port)
            ids = client.request(
                "seed_inputs",
                {"activity_id": "a1", "tuples": [{"fields": f} for f in SAMPLE_INPUTS]},
            )["tuple_ids"]
            client.request(
                "insert_tasks",
                {
                    "tasks": [
                        {
                            "task_id": i,
                            "activity_id": "a1",
                            "workflow_id": "wf-test",
                            "worker_id": (i - 1) % 2 + 1,
                            "command_line": "/run",
                            "input_tuple_ids": [ids[0]],
                            "status": "READY",
                            "failure_trials": 0,
                            "std_out": "",
                        }
                        for i in (1, 2, 3, 4)
                    ]
                },
            )
            out = client.request("claim_ready", {"worker_id": 2, "max_n": 1, "now": 2})
            assert [t["task_id"] for t in out["tasks"]] == [2]
            # kill the node owning partition 2, promote, and route again
            cluster.execute("kill_node", {"node": "d2"})
            cluster.execute("promote_replica", {"node": "d2"})
            out = client.request("claim_ready", {"worker_id": 2, "max_n": 1, "now": 3})
            assert [t["task_id"] for t in out["tasks"]] == [4]
            client.close()
        finally:
            connector.stop()
