"""Domain model: workflows, tasks, domain tuples, provenance links, topology.

All values are immutable once constructed and safe to pass between threads.
Timestamps are integer milliseconds since the engine-start epoch; the store
assigns them at commit time.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import ConfigError, CycleError


class Operator(str, Enum):
    MAP = "MAP"
    FILTER = "FILTER"
    REDUCE = "REDUCE"


class TaskStatus(str, Enum):
    READY = "READY"
    RUNNING = "RUNNING"
    FINISHED = "FINISHED"
    ABORTED = "ABORTED"


# (from, to) pairs the work-queue state machine accepts.
LEGAL_TRANSITIONS = {
    (TaskStatus.READY, TaskStatus.RUNNING),
    (TaskStatus.RUNNING, TaskStatus.FINISHED),
    (TaskStatus.RUNNING, TaskStatus.READY),  # retry
    (TaskStatus.RUNNING, TaskStatus.ABORTED),
}

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def template_placeholders(template: str) -> list[str]:
    return _PLACEHOLDER_RE.findall(template)


def render_command(template: str, fields: dict) -> str:
    """Substitute {name} placeholders; unknown names raise KeyError."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in fields:
            raise KeyError(name)
        value = fields[name]
        if isinstance(value, float):
            return repr(value)  # shortest round-trip form
        return str(value)

    return _PLACEHOLDER_RE.sub(sub, template)


@dataclass(frozen=True)
class ActivitySpec:
    activity_id: str
    name: str
    operator: Operator
    command_template: str
    input_schema: tuple[str, ...]
    output_schema: tuple[str, ...]
    mean_duration_ms: int = 1000
    # Key into the synthetic-function registry (harness.workloads); None for
    # external-command activities.
    synthetic_fn: str | None = None

    def to_json(self) -> dict:
        d = {
            "activity_id": self.activity_id,
            "name": self.name,
            "operator": self.operator.value,
            "command_template": self.command_template,
            "input_schema": list(self.input_schema),
            "output_schema": list(self.output_schema),
            "mean_duration_ms": self.mean_duration_ms,
        }
        if self.synthetic_fn is not None:
            d["synthetic_fn"] = self.synthetic_fn
        return d

    @staticmethod
    def from_json(d: dict) -> "ActivitySpec":
        return ActivitySpec(
            activity_id=d["activity_id"],
            name=d.get("name", d["activity_id"]),
            operator=Operator(d.get("operator", "MAP")),
            command_template=d["command_template"],
            input_schema=tuple(d.get("input_schema", ())),
            output_schema=tuple(d.get("output_schema", ())),
            mean_duration_ms=int(d.get("mean_duration_ms", 1000)),
            synthetic_fn=d.get("synthetic_fn"),
        )


@dataclass(frozen=True)
class WorkflowSpec:
    workflow_id: str
    activities: tuple[ActivitySpec, ...]
    edges: tuple[tuple[str, str], ...]

    def activity(self, activity_id: str) -> ActivitySpec:
        for a in self.activities:
            if a.activity_id == activity_id:
                return a
        raise KeyError(activity_id)

    def upstream_of(self, activity_id: str) -> list[str]:
        return sorted(u for (u, v) in self.edges if v == activity_id)

    def downstream_of(self, activity_id: str) -> list[str]:
        return sorted(v for (u, v) in self.edges if u == activity_id)

    def source_activities(self) -> list[str]:
        targets = {v for (_, v) in self.edges}
        return sorted(a.activity_id for a in self.activities if a.activity_id not in targets)

    def to_json(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "activities": [a.to_json() for a in self.activities],
            "edges": [list(e) for e in self.edges],
        }

    @staticmethod
    def from_json(d: dict) -> "WorkflowSpec":
        return WorkflowSpec(
            workflow_id=d["workflow_id"],
            activities=tuple(ActivitySpec.from_json(a) for a in d.get("activities", [])),
            edges=tuple((e[0], e[1]) for e in d.get("edges", [])),
        )


@dataclass(frozen=True)
class Task:
    """One row of the work queue. ``worker_id`` is the partition key."""

    task_id: int
    activity_id: str
    workflow_id: str
    worker_id: int
    core_slot: int = 1
    command_line: str = ""
    workspace: str = ""
    failure_trials: int = 0
    std_out: str = ""
    start_time: int | None = None
    end_time: int | None = None
    status: TaskStatus = TaskStatus.READY
    input_tuple_ids: tuple[int, ...] = ()

    def to_row(self) -> dict:
        return {
            "task_id": self.task_id,
            "activity_id": self.activity_id,
            "workflow_id": self.workflow_id,
            "worker_id": self.worker_id,
            "core_slot": self.core_slot,
            "command_line": self.command_line,
            "workspace": self.workspace,
            "failure_trials": self.failure_trials,
            "std_out": self.std_out,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "status": self.status.value,
            "input_tuple_ids": list(self.input_tuple_ids),
        }

    @staticmethod
    def from_row(row: dict) -> "Task":
        return Task(
            task_id=row["task_id"],
            activity_id=row["activity_id"],
            workflow_id=row.get("workflow_id", ""),
            worker_id=row["worker_id"],
            core_slot=row.get("core_slot", 1),
            command_line=row.get("command_line", ""),
            workspace=row.get("workspace", ""),
            failure_trials=row.get("failure_trials", 0),
            std_out=row.get("std_out", ""),
            start_time=row.get("start_time"),
            end_time=row.get("end_time"),
            status=TaskStatus(row["status"]),
            input_tuple_ids=tuple(row.get("input_tuple_ids", ())),
        )

    def with_status(self, status: TaskStatus, **kw) -> "Task":
        if (self.status, status) not in LEGAL_TRANSITIONS:
            raise ValueError(f"illegal transition {self.status.value} -> {status.value}")
        return replace(self, status=status, **kw)


@dataclass(frozen=True)
class DomainTuple:
    tuple_id: int
    activity_id: str
    produced_by_task: int | None
    fields: dict
    raw_file_path: str | None = None

    def to_row(self) -> dict:
        return {
            "tuple_id": self.tuple_id,
            "activity_id": self.activity_id,
            "produced_by_task": self.produced_by_task,
            "fields": dict(self.fields),
            "raw_file_path": self.raw_file_path,
        }

    @staticmethod
    def from_row(row: dict) -> "DomainTuple":
        return DomainTuple(
            tuple_id=row["tuple_id"],
            activity_id=row["activity_id"],
            produced_by_task=row.get("produced_by_task"),
            fields=dict(row.get("fields", {})),
            raw_file_path=row.get("raw_file_path"),
        )


class ProvKind(str, Enum):
    USED = "USED"
    GENERATED_BY = "GENERATED_BY"
    STEERED_BY = "STEERED_BY"


@dataclass(frozen=True)
class ProvLink:
    """Provenance edge. For STEERED_BY, ``task_id`` holds the steering-action id."""

    link_id: int
    kind: ProvKind
    task_id: int
    tuple_id: int

    def to_row(self) -> dict:
        return {
            "link_id": self.link_id,
            "kind": self.kind.value,
            "task_id": self.task_id,
            "tuple_id": self.tuple_id,
        }

    @staticmethod
    def from_row(row: dict) -> "ProvLink":
        return ProvLink(row["link_id"], ProvKind(row["kind"]), row["task_id"], row["tuple_id"])


@dataclass(frozen=True)
class SteeringAction:
    action_id: int
    kind: str  # UPDATE_INPUTS | PRUNE
    activity_id: str
    predicate: dict  # predicate tree, JSON form
    assignments: dict
    issued_at: int
    affected_task_ids: tuple[int, ...]

    def to_row(self) -> dict:
        return {
            "action_id": self.action_id,
            "kind": self.kind,
            "activity_id": self.activity_id,
            "predicate": self.predicate,
            "assignments": dict(self.assignments),
            "issued_at": self.issued_at,
            "affected_task_ids": list(self.affected_task_ids),
        }


@dataclass(frozen=True)
class RoleInstance:
    kind: str  # data | worker | connector | supervisor | secondary_supervisor
    ident: str
    node: str  # physical node hosting the instance


@dataclass(frozen=True)
class ClusterTopology:
    """Role-to-physical-node assignment for one engine deployment."""

    workers: tuple[RoleInstance, ...]
    data_nodes: tuple[RoleInstance, ...]
    connectors: tuple[RoleInstance, ...]
    supervisor: RoleInstance | None
    secondary_supervisor: RoleInstance | None = None
    threads_per_worker: int = 1
    replicate: bool = True

    @property
    def W(self) -> int:
        return len(self.workers)

    @property
    def D(self) -> int:
        return len(self.data_nodes)

    @property
    def C(self) -> int:
        return len(self.connectors)

    def node_map(self) -> dict[str, list[RoleInstance]]:
        nodes: dict[str, list[RoleInstance]] = {}
        roles = list(self.workers) + list(self.data_nodes) + list(self.connectors)
        if self.supervisor:
            roles.append(self.supervisor)
        if self.secondary_supervisor:
            roles.append(self.secondary_supervisor)
        for r in roles:
            nodes.setdefault(r.node, []).append(r)
        return nodes

    def worker_hostname(self, worker_id: int) -> str | None:
        for w in self.workers:
            if w.ident == str(worker_id):
                return w.node
        return None

    def validate(self) -> tuple[list[str], list[str]]:
        """Returns (errors, warnings)."""
        errors: list[str] = []
        warnings: list[str] = []
        if self.W < 1:
            errors.append("topology needs at least one worker node")
        if self.D < 1:
            errors.append("topology needs at least one data node")
        if self.C < 1:
            errors.append("topology needs at least one connector")
        if self.supervisor is None:
            errors.append("topology needs exactly one supervisor")
        if self.threads_per_worker < 1:
            errors.append("threads_per_worker must be >= 1")
        # Recommended placement: no physical node hosts two instances of the
        # same role kind (warn only).
        for node, roles in self.node_map().items():
            kinds = [r.kind for r in roles]
            for kind in set(kinds):
                if kinds.count(kind) > 1:
                    warnings.append(f"node {node} hosts {kinds.count(kind)} {kind} instances")
        return errors, warnings

    @staticmethod
    def from_config(cfg: dict) -> "ClusterTopology":
        try:
            workers = tuple(
                RoleInstance("worker", str(w["id"]), w["node"]) for w in cfg["workers"]
            )
            data_nodes = tuple(
                RoleInstance("data", str(d["id"]), d["node"]) for d in cfg["data_nodes"]
            )
            connectors = tuple(
                RoleInstance("connector", str(c["id"]), c["node"]) for c in cfg["connectors"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad topology config: {exc}") from exc
        sup = cfg.get("supervisor")
        sec = cfg.get("secondary_supervisor")
        return ClusterTopology(
            workers=workers,
            data_nodes=data_nodes,
            connectors=connectors,
            supervisor=RoleInstance("supervisor", "sup", sup["node"]) if sup else None,
            secondary_supervisor=(
                RoleInstance("secondary_supervisor", "sup2", sec["node"]) if sec else None
            ),
            threads_per_worker=int(cfg.get("threads_per_worker", 1)),
            replicate=bool(cfg.get("replicate", True)),
        )


@dataclass
class ValidationReport:
    ok: bool
    errors: list[str] = field(default_factory=list)


def validate_workflow(spec: WorkflowSpec) -> ValidationReport:
    """Checks the structural rules a workflow must satisfy before it runs."""
    errors: list[str] = []
    if not spec.activities:
        errors.append("no activities")
    ids = [a.activity_id for a in spec.activities]
    seen: set[str] = set()
    for aid in ids:
        if not aid:
            errors.append("empty activity_id")
        elif aid in seen:
            errors.append(f"duplicate activity_id: {aid}")
        seen.add(aid)
    for (u, v) in spec.edges:
        for end in (u, v):
            if end not in seen:
                errors.append(f"edge endpoint not declared: {end}")
    for a in spec.activities:
        for ph in template_placeholders(a.command_template):
            if ph not in a.input_schema:
                errors.append(
                    f"activity {a.activity_id}: placeholder {{{ph}}} not in input_schema"
                )
        outs = list(a.output_schema)
        if len(set(outs)) != len(outs):
            errors.append(f"activity {a.activity_id}: duplicate output_schema fields")
    if not any(e.startswith("edge endpoint") for e in errors):
        cycle = _find_cycle(ids, spec.edges)
        if cycle:
            errors.append("cycle: " + ",".join(sorted(cycle)))
    return ValidationReport(ok=not errors, errors=errors)


def _find_cycle(ids: list[str], edges: tuple[tuple[str, str], ...]) -> list[str] | None:
    adj: dict[str, list[str]] = {i: [] for i in ids}
    for (u, v) in edges:
        adj[u].append(v)
    color: dict[str, int] = {}
    stack: list[str] = []

    def dfs(n: str) -> list[str] | None:
        color[n] = 1
        stack.append(n)
        for m in adj[n]:
            if color.get(m, 0) == 1:
                return stack[stack.index(m):]
            if color.get(m, 0) == 0:
                found = dfs(m)
                if found:
                    return found
        stack.pop()
        color[n] = 2
        return None

    for n in ids:
        if color.get(n, 0) == 0:
            found = dfs(n)
            if found:
                return found
    return None


def topo_order(spec: WorkflowSpec) -> list[str]:
    """Dependency order; ties broken lexicographically so output is stable."""
    ids = [a.activity_id for a in spec.activities]
    indeg = {i: 0 for i in ids}
    adj: dict[str, list[str]] = {i: [] for i in ids}
    for (u, v) in spec.edges:
        adj[u].append(v)
        indeg[v] += 1
    heap = [i for i in ids if indeg[i] == 0]
    heapq.heapify(heap)
    out: list[str] = []
    while heap:
        n = heapq.heappop(heap)
        out.append(n)
        for m in adj[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                heapq.heappush(heap, m)
    if len(out) != len(ids):
        remaining = sorted(set(ids) - set(out))
        raise CycleError("cycle: " + ",".join(remaining))
    return out
