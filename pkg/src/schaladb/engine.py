"""Engine assembly: topology in, completed workflow out.

``Engine.local`` builds everything in one process (data nodes, connectors,
workers, supervisors as threads over the in-process transport), the form
the experiment harness drives. The same roles attach over TCP when started
through the CLI daemon.

Two scheduling modes exist:

* distributed (default): every worker claims directly from its own work
  queue partition through its connector.
* centralized: a single master owns the only store connection; workers send
  their requests to the master, which serializes them through one internal
  queue and demands an extra acknowledgement message before committing
  results. This reproduces the classic master-mediated design as a baseline.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field

from .connector import ConnectorMap, LocalConnector, distribute
from .errors import ConnectorDown, SchalaError, StoreError
from .model import ClusterTopology, RoleInstance, WorkflowSpec, validate_workflow
from .store.client import StoreSession
from .store.cluster import StoreCluster
from .store.metrics import MetricsRegistry
from .supervisor import Supervisor, SupervisorConfig
from .worker import ExecutionEnv, WorkerConfig, WorkerNode


def simple_topology(
    W: int,
    D: int = 1,
    C: int = 1,
    threads: int = 1,
    replicate: bool = True,
    secondary_supervisor: bool = False,
) -> ClusterTopology:
    """Desk-scale topology: every role instance on its own physical node,
    except the supervisors, which share nodes with the first workers."""
    workers = tuple(RoleInstance("worker", str(i), f"nw{i}") for i in range(1, W + 1))
    data_nodes = tuple(RoleInstance("data", f"d{i}", f"nd{i}") for i in range(1, D + 1))
    connectors = tuple(RoleInstance("connector", f"c{i}", f"nc{i}") for i in range(1, C + 1))
    sup = RoleInstance("supervisor", "sup", workers[0].node)
    sec = (
        RoleInstance("secondary_supervisor", "sup2", workers[min(1, W - 1)].node)
        if secondary_supervisor
        else None
    )
    return ClusterTopology(
        workers=workers,
        data_nodes=data_nodes,
        connectors=connectors,
        supervisor=sup,
        secondary_supervisor=sec,
        threads_per_worker=threads,
        replicate=replicate,
    )


@dataclass
class EngineConfig:
    mode: str = "distributed"  # or "centralized"
    transport: str = "local"  # or "tcp": same messages over loopback sockets
    claim_batch: int | None = None
    retry_max: int = 3
    poll_interval_ms: int = 250
    lease_factor: int = 10
    lease_floor_ms: int = 5000
    heartbeat_timeout_ms: int = 3000
    synthetic: bool = True
    failure_probability: float = 0.0
    seed: int = 0
    sleep_scale: float = 1.0
    run_secondary_supervisor: bool = False
    run_timeout_s: float = 600.0


@dataclass
class EngineRunResult:
    elapsed_ms: float
    status_counts: dict
    n_tasks: int
    metrics: dict
    per_worker: dict = field(default_factory=dict)
    per_activity: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    @property
    def all_finished(self) -> bool:
        return self.n_tasks > 0 and self.status_counts.get("FINISHED", 0) == self.n_tasks


class CentralizedMaster:
    """The master of the centralized baseline: one auxiliary request queue,
    one store connection, and a mandatory result-acknowledgement hop."""

    def __init__(self, store_transport):
        self._transport = store_transport
        self._queue: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._tokens: dict[int, dict] = {}
        self._token_seq = 0

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True, name="central-master")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=5)

    def submit(self, op: str, payload: dict) -> dict:
        """One serialized pass through the master. Raises what the op raised."""
        if self._stop.is_set():
            raise ConnectorDown("master is down")
        box: dict = {}
        done = threading.Event()
        self._queue.put((op, payload, box, done))
        if not done.wait(timeout=60):
            raise ConnectorDown("master did not answer")
        if "error" in box:
            raise box["error"]
        return box["result"]

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                op, payload, box, done = self._queue.get(timeout=0.05)
            except queue.Empty:
                continue
            try:
                # The master decodes each request and encodes each reply
                # itself, so the shared-transport cost sits on the single
                # serialized path, as in the original design.
                payload = json.loads(json.dumps(payload))
                box["result"] = json.loads(json.dumps(self._handle(op, payload)))
            except (StoreError, ConnectorDown) as exc:
                box["error"] = exc
            except Exception as exc:  # pragma: no cover - defensive
                box["error"] = StoreError("internal", repr(exc))
            finally:
                done.set()

    def _handle(self, op: str, payload: dict) -> dict:
        if op == "submit_result":
            self._token_seq += 1
            self._tokens[self._token_seq] = payload
            return {"ack_token": self._token_seq}
        if op == "commit_result":
            stored = self._tokens.pop(payload["ack_token"], None)
            if stored is None:
                raise StoreError("bad_request", "unknown ack token")
            return self._transport.request("complete_task", stored)
        return self._transport.request(op, payload)


class MasterChannel:
    """Connector-shaped handle that routes everything through the master.

    Completions take the documented two messages: submit the result, then
    acknowledge so the master commits it.
    """

    def __init__(self, master: CentralizedMaster):
        self._master = master

    def send(self, op: str, payload: dict) -> dict:
        if op == "complete_task":
            first = self._master.submit("submit_result", payload)
            return self._master.submit("commit_result", {"ack_token": first["ack_token"]})
        return self._master.submit(op, payload)


class TcpHandle:
    """Connector-shaped handle over one NDJSON client connection."""

    def __init__(self, host: str, port: int, centralized: bool = False):
        from .store.tcp import NdjsonClient

        self._client = NdjsonClient(host, port, timeout_s=30.0)
        self._centralized = centralized

    def send(self, op: str, payload: dict) -> dict:
        if self._centralized and op == "complete_task":
            first = self._client.request("submit_result", payload)
            return self._client.request("commit_result", {"ack_token": first["ack_token"]})
        return self._client.request(op, payload)

    def close(self) -> None:
        self._client.close()


class Engine:
    def __init__(
        self,
        topology: ClusterTopology,
        config: EngineConfig | None = None,
        cluster: StoreCluster | None = None,
        registry: MetricsRegistry | None = None,
        remote_connectors: dict | None = None,
    ):
        self.topology = topology
        self.config = config or EngineConfig()
        errors, self.warnings = topology.validate()
        if errors:
            raise SchalaError("; ".join(errors))
        self.registry = registry or MetricsRegistry()
        self.remote_connectors = remote_connectors  # connector id -> (host, port)
        if cluster is None and remote_connectors is None:
            if self.config.mode == "centralized":
                cluster = StoreCluster.create(W=1, D=1, replicate=False)
            else:
                cluster = StoreCluster.create(
                    W=topology.W, D=topology.D, replicate=topology.replicate
                )
        self.cluster = cluster
        self.connectors: dict[str, LocalConnector] = {}
        self.connector_map: ConnectorMap | None = None
        self.master: CentralizedMaster | None = None
        self.workers: dict[int, WorkerNode] = {}
        self.supervisor: Supervisor | None = None
        self.secondary: Supervisor | None = None
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._ran = False
        self.on_execute = None  # hook(task_id) for execution accounting
        self._build_plumbing()

    # ----------------------------------------------------------- composition

    @classmethod
    def local(cls, topology: ClusterTopology, config: EngineConfig | None = None) -> "Engine":
        return cls(topology, config)

    @classmethod
    def attached(
        cls,
        topology: ClusterTopology,
        connector_addrs: dict,
        config: EngineConfig | None = None,
    ) -> "Engine":
        """Drives a store that already runs elsewhere (the CLI daemon):
        sessions speak to its connectors over TCP; no local cluster."""
        if config is not None and config.mode == "centralized":
            raise SchalaError(
                "the centralized baseline runs in-process only (use the benchmark harness)"
            )
        return cls(topology, config, remote_connectors=connector_addrs)

    def _build_plumbing(self) -> None:
        self._servers: dict[str, object] = {}
        if self.remote_connectors is not None:
            self.connector_map = distribute(self.topology.workers, self.topology.connectors)
            self.warnings.extend(self.connector_map.warnings)
            return
        if self.config.mode == "centralized":
            from .store.protocol import LocalTransport

            self.master = CentralizedMaster(LocalTransport(self.cluster))
            if self.config.transport == "tcp":
                from .store.tcp import NdjsonServer

                server = NdjsonServer("127.0.0.1", 0, self.master.submit)
                server.start()
                self._servers["master"] = server
            return
        for c in self.topology.connectors:
            local = LocalConnector(c.ident, self.cluster, node=c.node)
            self.connectors[c.ident] = local
            if self.config.transport == "tcp":
                from .store.tcp import NdjsonServer

                server = NdjsonServer("127.0.0.1", 0, local.send)
                server.start()
                self._servers[c.ident] = server
        self.connector_map = distribute(self.topology.workers, self.topology.connectors)
        self.warnings.extend(self.connector_map.warnings)

    def _handle_for_connector(self, connector_id: str):
        if self.remote_connectors is not None:
            host, port = self.remote_connectors[connector_id]
            return TcpHandle(host, port)
        if self.config.transport == "tcp":
            server = self._servers[connector_id]
            return TcpHandle("127.0.0.1", server.port)
        return self.connectors[connector_id]

    def _master_handle(self):
        if self.config.transport == "tcp":
            server = self._servers["master"]
            return TcpHandle("127.0.0.1", server.port, centralized=True)
        return MasterChannel(self.master)

    def _handles_for_worker(self, worker_ident: str) -> list:
        if self.config.mode == "centralized":
            return [self._master_handle()]
        binding = self.connector_map.for_worker(worker_ident)
        handles = [self._handle_for_connector(binding.primary)]
        if binding.secondary:
            handles.append(self._handle_for_connector(binding.secondary))
        return handles

    def _supervisor_handles(self) -> list:
        if self.config.mode == "centralized":
            return [self._master_handle()]
        if self.remote_connectors is not None:
            return [self._handle_for_connector(c) for c in sorted(self.remote_connectors)]
        return [self._handle_for_connector(c) for c in sorted(self.connectors)]

    def make_client_session(self, node_id: str = "client") -> StoreSession:
        """A session for queries, steering, and services."""
        if self.config.mode == "centralized":
            if self.master is not None and not self.master._stop.is_set():
                return StoreSession(node_id, [self._master_handle()], self.registry)
            # post-run inspection after the master wound down
            return StoreSession(
                node_id, [LocalConnector("post-run", self.cluster)], self.registry
            )
        return StoreSession(node_id, self._supervisor_handles(), self.registry)

    # ------------------------------------------------------------------- run

    def run(self, workflow: WorkflowSpec, inputs) -> EngineRunResult:
        if self._ran:
            raise SchalaError("one workflow per engine run")
        self._ran = True
        report = validate_workflow(workflow)
        if not report.ok:
            raise SchalaError("invalid workflow: " + "; ".join(report.errors))

        if self.master is not None:
            self.master.start()
        setup_session = self.make_client_session("setup")
        setup_session.call(
            "register_workflow",
            {
                "spec": workflow.to_json(),
                "exec": {
                    "seed": self.config.seed,
                    "synthetic": self.config.synthetic,
                    "failure_probability": self.config.failure_probability,
                },
            },
        )
        inputs_by_activity = self._normalize_inputs(workflow, inputs)
        for activity_id, rows in inputs_by_activity.items():
            setup_session.call(
                "seed_inputs",
                {"activity_id": activity_id, "tuples": [{"fields": dict(r)} for r in rows]},
            )
        setup_session.meta_put("engine_state", "RUNNING")
        setup_session.meta_put(
            "run",
            {"workflow_id": workflow.workflow_id, "started_ms": setup_session.now_ms()},
        )
        setup_session.meta_put(
            "topology",
            {
                "workers": {w.ident: w.node for w in self.topology.workers},
                "data_nodes": [d.ident for d in self.topology.data_nodes],
                "connectors": [c.ident for c in self.topology.connectors],
                "threads_per_worker": self.topology.threads_per_worker,
            },
        )

        env = ExecutionEnv(
            workflow=workflow,
            seed=self.config.seed,
            synthetic=self.config.synthetic,
            failure_probability=self.config.failure_probability,
            sleep_scale=self.config.sleep_scale,
        )
        scheduling_W = 1 if self.config.mode == "centralized" else self.topology.W
        sup_cfg = SupervisorConfig(
            poll_interval_ms=self.config.poll_interval_ms,
            lease_factor=self.config.lease_factor,
            lease_floor_ms=self.config.lease_floor_ms,
            heartbeat_timeout_ms=self.config.heartbeat_timeout_ms,
            retry_max=self.config.retry_max,
        )
        sup_node = self.topology.supervisor.node if self.topology.supervisor else "nsup"
        self.supervisor = Supervisor(
            "sup",
            StoreSession(sup_node, self._supervisor_handles(), self.registry),
            workflow,
            scheduling_W,
            sup_cfg,
        )
        if self.config.run_secondary_supervisor and self.topology.secondary_supervisor:
            self.secondary = Supervisor(
                "sup2",
                StoreSession(
                    self.topology.secondary_supervisor.node,
                    self._supervisor_handles(),
                    self.registry,
                ),
                workflow,
                scheduling_W,
                sup_cfg,
            )

        t0 = time.perf_counter()
        for w in self.topology.workers:
            worker_id = int(w.ident)
            # centralized mode has a single shared partition: every worker
            # claims from it, so the claim identity is 1 for all of them
            claim_id = 1 if self.config.mode == "centralized" else worker_id
            session = StoreSession(
                w.node,
                self._handles_for_worker(w.ident),
                self.registry,
                worker_hint=claim_id,
            )
            node = WorkerNode(
                WorkerConfig(
                    worker_id=claim_id,
                    threads=self.topology.threads_per_worker,
                    claim_batch=self.config.claim_batch,
                    retry_max=self.config.retry_max,
                ),
                session,
                env,
                on_execute=self.on_execute,
            )
            self.workers[worker_id] = node
            node.start()
        self._threads.append(self.supervisor.start_primary(self._stop))
        if self.secondary is not None:
            self._threads.append(self.secondary.start_secondary(self._stop))

        completed = self._await_completion()
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
        self._stop.set()
        for node in self.workers.values():
            node.stop()
        for node in self.workers.values():
            node.join(timeout=5)

        errors = []
        if not completed:
            errors.append("run did not complete before timeout")
        for sup in (self.supervisor, self.secondary):
            if sup is not None and sup.error is not None:
                errors.append(f"supervisor: {sup.error}")
        for wid, node in self.workers.items():
            if node.error is not None:
                errors.append(f"worker {wid}: {node.error}")

        counts = setup_session.call("status_counts", {})
        setup_session.meta_put("engine_state", "COMPLETE")
        for node in self.workers.values():
            node.session.publish_metrics()
        self.supervisor.session.publish_metrics()
        if self.master is not None:
            self.master.stop()
        for server in self._servers.values():
            try:
                server.stop()
            except OSError:
                pass
        return EngineRunResult(
            elapsed_ms=elapsed_ms,
            status_counts=counts["totals"],
            n_tasks=sum(counts["totals"].values()),
            metrics=self.registry.report(),
            per_worker=counts["per_worker"],
            per_activity=counts["per_activity"],
            errors=errors,
        )

    def _await_completion(self) -> bool:
        deadline = time.monotonic() + self.config.run_timeout_s
        supervisors = [s for s in (self.supervisor, self.secondary) if s is not None]
        while time.monotonic() < deadline:
            if any(s.complete.is_set() for s in supervisors):
                return True
            # A dead primary with no standby cannot finish the workflow.
            if all(s.stopped.is_set() for s in supervisors):
                return any(s.complete.is_set() for s in supervisors)
            time.sleep(0.01)
        return False

    @staticmethod
    def _normalize_inputs(workflow: WorkflowSpec, inputs) -> dict:
        sources = workflow.source_activities()
        if isinstance(inputs, dict):
            unknown = set(inputs) - set(sources)
            if unknown:
                raise SchalaError(f"inputs reference non-source activities: {sorted(unknown)}")
            return {k: list(v) for k, v in inputs.items()}
        if len(sources) != 1:
            raise SchalaError("plain input list needs exactly one source activity")
        return {sources[0]: list(inputs)}

    # -------------------------------------------------------- fault injection

    def kill_connector(self, connector_id: str) -> None:
        self.connectors[connector_id].kill()
        server = self._servers.get(connector_id)
        if server is not None:
            server.stop()

    def kill_data_node(self, node_id: str) -> None:
        if self.cluster is not None:
            self.cluster.execute("kill_node", {"node": node_id})
        else:
            self.make_client_session("fault").call("kill_node", {"node": node_id})

    def kill_worker(self, worker_id: int) -> None:
        self.workers[worker_id].crash()

    def restart_worker(self, worker_id: int) -> None:
        old = self.workers[worker_id]
        node = WorkerNode(old.config, old.session, old.env, on_execute=self.on_execute)
        self.workers[worker_id] = node
        node.start()

    def kill_primary_supervisor(self) -> None:
        """Stops the primary's loop without releasing its lease, as a crash
        would: the secondary must notice the stale heartbeat and take over."""
        if self.supervisor is not None:
            self.supervisor.crash()
