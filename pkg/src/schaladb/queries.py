"""Runtime analytical queries over store snapshots.

A small relational evaluator (select / project / equi-join /
group-aggregate / order-by / limit over table snapshots) plus the engine's
predefined query set Q1..Q7. Relative time windows ("the last minute")
take ``now`` as an explicit parameter, so results are deterministic under
test; the window is [now - 60000, now] in engine milliseconds.

Domain-tuple rows are flattened for querying: their ``fields`` map merges
into the row, so ``fl > 0.5`` works directly.

Global aggregation over an empty input yields an empty result (not a
single null row).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from . import predicate as pred_mod
from .errors import StoreError

WINDOW_MS = 60_000

WQ_COLUMNS = (
    "task_id",
    "activity_id",
    "workflow_id",
    "worker_id",
    "core_slot",
    "command_line",
    "workspace",
    "failure_trials",
    "std_out",
    "start_time",
    "end_time",
    "status",
    "duration_ms",  # derived: end_time - start_time when both set
)
LINK_COLUMNS = ("link_id", "kind", "task_id", "tuple_id")
TUPLE_BASE_COLUMNS = ("tuple_id", "activity_id", "produced_by_task", "raw_file_path")


# --- plan nodes ---------------------------------------------------------


@dataclass(frozen=True)
class Source:
    table: str
    where: dict | None = None


@dataclass(frozen=True)
class Select:
    child: object
    where: dict


@dataclass(frozen=True)
class Project:
    child: object
    columns: tuple


@dataclass(frozen=True)
class Join:
    left: object
    right: object
    on: tuple  # ((left_col, right_col), ...)
    right_prefix: str = ""  # applied to right columns that collide


@dataclass(frozen=True)
class GroupAgg:
    child: object
    keys: tuple
    aggs: tuple  # ((fn, col_or_None, alias), ...) fn in count,sum,avg,max,min


@dataclass(frozen=True)
class OrderBy:
    child: object
    keys: tuple  # ((col, descending), ...)


@dataclass(frozen=True)
class Limit:
    child: object
    n: int


@dataclass
class QueryResult:
    columns: list
    rows: list
    at_ms: int = 0
    elapsed_ms: float = 0.0

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "rows": [list(r) for r in self.rows],
            "at_ms": self.at_ms,
            "elapsed_ms": round(self.elapsed_ms, 3),
        }

    def canonical(self) -> dict:
        """Comparison form: floats rounded so two independent evaluation
        paths that sum in the same order compare byte-equal."""
        def canon(v):
            if isinstance(v, float):
                return round(v, 9)
            return v

        return {
            "columns": list(self.columns),
            "rows": [[canon(v) for v in r] for r in self.rows],
        }


def flatten_tuple_row(row: dict) -> dict:
    flat = {k: row.get(k) for k in TUPLE_BASE_COLUMNS}
    for k, v in (row.get("fields") or {}).items():
        if k not in flat or flat[k] is None:
            flat[k] = v
    return flat


class _Relation:
    __slots__ = ("columns", "rows")

    def __init__(self, columns, rows):
        self.columns = list(columns)
        self.rows = rows  # list of dicts


def _eval(plan, snapshot_fn) -> _Relation:
    if isinstance(plan, Source):
        return _eval_source(plan, snapshot_fn)
    if isinstance(plan, Select):
        rel = _eval(plan.child, snapshot_fn)
        pred = pred_mod.from_json(plan.where)
        return _Relation(rel.columns, [r for r in rel.rows if pred_mod.matches(pred, r)])
    if isinstance(plan, Project):
        rel = _eval(plan.child, snapshot_fn)
        missing = [c for c in plan.columns if c not in rel.columns]
        if missing:
            raise StoreError("bad_request", f"unknown columns: {missing}")
        return _Relation(plan.columns, [{c: r.get(c) for c in plan.columns} for r in rel.rows])
    if isinstance(plan, Join):
        return _eval_join(plan, snapshot_fn)
    if isinstance(plan, GroupAgg):
        return _eval_group(plan, snapshot_fn)
    if isinstance(plan, OrderBy):
        rel = _eval(plan.child, snapshot_fn)
        rows = list(rel.rows)
        for col, desc in reversed(plan.keys):
            rows.sort(key=lambda r, c=col: _sort_key(r.get(c)), reverse=bool(desc))
        return _Relation(rel.columns, rows)
    if isinstance(plan, Limit):
        rel = _eval(plan.child, snapshot_fn)
        return _Relation(rel.columns, rel.rows[: plan.n])
    raise StoreError("bad_request", f"unknown plan node: {plan!r}")


def _sort_key(v):
    if v is None:
        return (0, 0, "")
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (1, v, "")
    return (2, 0, str(v))


def _eval_source(plan: Source, snapshot_fn) -> _Relation:
    rows = snapshot_fn(plan.table, plan.where)
    if plan.table == "work_queue":
        cols = list(WQ_COLUMNS)
        for r in rows:
            start, end = r.get("start_time"), r.get("end_time")
            r["duration_ms"] = (end - start) if (start is not None and end is not None) else None
        rows = [{c: r.get(c) for c in cols} for r in rows]
    elif plan.table == "prov_links":
        cols = list(LINK_COLUMNS)
        rows = [{c: r.get(c) for c in cols} for r in rows]
    elif plan.table == "domain_tuples":
        rows = [flatten_tuple_row(r) for r in rows]
        extra = sorted({k for r in rows for k in r} - set(TUPLE_BASE_COLUMNS))
        cols = list(TUPLE_BASE_COLUMNS) + extra
    else:
        cols = sorted({k for r in rows for k in r})
    return _Relation(cols, rows)


def _eval_join(plan: Join, snapshot_fn) -> _Relation:
    left = _eval(plan.left, snapshot_fn)
    right = _eval(plan.right, snapshot_fn)
    rename = {}
    for c in right.columns:
        if c in left.columns:
            if not plan.right_prefix:
                raise StoreError(
                    "bad_request", f"join column collision on {c}; set right_prefix"
                )
            rename[c] = plan.right_prefix + c
    on = [(l, r) for (l, r) in plan.on]
    for (l, r) in on:
        if l not in left.columns:
            raise StoreError("bad_request", f"unknown join column: {l}")
        if r not in right.columns:
            raise StoreError("bad_request", f"unknown join column: {r}")
    index: dict = {}
    for row in right.rows:
        key = tuple(row.get(r) for (_, r) in on)
        index.setdefault(key, []).append(row)
    out_rows = []
    for lrow in left.rows:
        key = tuple(lrow.get(l) for (l, _) in on)
        for rrow in index.get(key, ()):
            merged = dict(lrow)
            for c, v in rrow.items():
                merged[rename.get(c, c)] = v
            out_rows.append(merged)
    cols = left.columns + [rename.get(c, c) for c in right.columns if rename.get(c, c) not in left.columns]
    return _Relation(cols, out_rows)


def _eval_group(plan: GroupAgg, snapshot_fn) -> _Relation:
    rel = _eval(plan.child, snapshot_fn)
    groups: dict = {}
    order: list = []
    for row in rel.rows:
        key = tuple(row.get(k) for k in plan.keys)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out_rows = []
    for key in order:
        rows = groups[key]
        out = {k: v for k, v in zip(plan.keys, key)}
        for fn, col, alias in plan.aggs:
            out[alias] = _aggregate(fn, col, rows)
        out_rows.append(out)
    if not plan.keys and not rel.rows:
        out_rows = []  # global aggregate over nothing: empty result
    cols = list(plan.keys) + [alias for (_, _, alias) in plan.aggs]
    return _Relation(cols, out_rows)


def _aggregate(fn: str, col, rows):
    if fn == "count":
        if col is None:
            return len(rows)
        return sum(1 for r in rows if r.get(col) is not None)
    values = [r.get(col) for r in rows if r.get(col) is not None]
    if not values:
        return None
    if fn == "sum":
        return sum(values)
    if fn == "avg":
        return sum(values) / len(values)
    if fn == "max":
        return max(values)
    if fn == "min":
        return min(values)
    raise StoreError("bad_request", f"unknown aggregate: {fn}")


# --- the query surface ---------------------------------------------------


PREDEFINED = ("Q1", "Q2", "Q3", "Q4", "Q5", "Q6", "Q7")


class QueryService:
    """Evaluates plans and the predefined set over one store session."""

    def __init__(self, session, workflow: dict | None = None, topology: dict | None = None):
        self.session = session
        self._workflow = workflow
        self._topology = topology

    # -- context -----------------------------------------------------------

    def workflow_json(self) -> dict | None:
        if self._workflow is None:
            self._workflow = self.session.meta_get("workflow")
        return self._workflow

    def topology_json(self) -> dict:
        if self._topology is None:
            self._topology = self.session.meta_get("topology") or {}
        return self._topology

    def worker_host(self, worker_id) -> str | None:
        return (self.topology_json().get("workers") or {}).get(str(worker_id))

    def _snapshot(self, table: str, where: dict | None):
        return self.session.snapshot(table, where)

    # -- evaluation --------------------------------------------------------

    def eval(self, plan, now: int | None = None) -> QueryResult:
        t0 = time.perf_counter()
        rel = _eval(plan, self._snapshot)
        elapsed = (time.perf_counter() - t0) * 1000.0
        self.session.timer.record("snapshot_query", elapsed)
        return QueryResult(
            columns=rel.columns,
            rows=[[r.get(c) for c in rel.columns] for r in rel.rows],
            at_ms=now if now is not None else self.session.now_ms(),
            elapsed_ms=elapsed,
        )

    def run_predefined(self, q: str, params: dict | None = None, now: int | None = None) -> QueryResult:
        params = params or {}
        q = q.upper()
        if q not in PREDEFINED:
            raise StoreError("bad_request", f"unknown predefined query: {q}")
        if now is None:
            now = self.session.now_ms()
        t0 = time.perf_counter()
        columns, rows = getattr(self, f"_{q.lower()}")(params, now)
        elapsed = (time.perf_counter() - t0) * 1000.0
        self.session.timer.record("snapshot_query", elapsed)
        return QueryResult(columns=columns, rows=rows, at_ms=now, elapsed_ms=elapsed)

    # -- Q1..Q7 ------------------------------------------------------------

    def _window(self, now: int) -> tuple[int, int]:
        return now - WINDOW_MS, now

    def _q1(self, params, now):
        """Status mix per worker node for tasks started in the last minute."""
        lo, hi = self._window(now)
        plan = OrderBy(
            GroupAgg(
                Source(
                    "work_queue",
                    {"and": [{"atom": ["start_time", ">=", lo]}, {"atom": ["start_time", "<=", hi]}]},
                ),
                keys=("worker_id", "status"),
                aggs=(("count", None, "n_tasks"), ("sum", "failure_trials", "failure_trials_total")),
            ),
            keys=(("worker_id", False), ("status", False)),
        )
        rel = _eval(plan, self._snapshot)
        return rel.columns, [[r.get(c) for c in rel.columns] for r in rel.rows]

    def _q2(self, params, now):
        """Bytes of raw files consumed per task finished in the last minute
        on one host, largest consumers first."""
        hostname = params.get("hostname", "")
        lo, hi = self._window(now)
        worker_ids = [
            int(w)
            for w, node in (self.topology_json().get("workers") or {}).items()
            if node == hostname
        ]
        if not worker_ids:
            return ["task_id", "status", "bytes_consumed"], []
        base = Source(
            "work_queue",
            {
                "and": [
                    {"atom": ["worker_id", "in", worker_ids]},
                    {"atom": ["status", "=", "FINISHED"]},
                    {"atom": ["end_time", ">=", lo]},
                    {"atom": ["end_time", "<=", hi]},
                ]
            },
        )
        used = Join(
            base,
            Source("prov_links", {"atom": ["kind", "=", "USED"]}),
            on=(("task_id", "task_id"),),
            right_prefix="link_",
        )
        with_tuples = Select(
            Join(
                used,
                Source("domain_tuples", None),
                on=(("tuple_id", "tuple_id"),),
                right_prefix="t_",
            ),
            {"atom": ["raw_file_path", "!=", None]},
        )
        plan = OrderBy(
            GroupAgg(
                with_tuples,
                keys=("task_id", "status"),
                aggs=(("sum", "size_bytes", "bytes_consumed"),),
            ),
            keys=(("bytes_consumed", True), ("status", False)),
        )
        rel = _eval(plan, self._snapshot)
        rows = [[r.get(c) for c in rel.columns] for r in rel.rows]
        return rel.columns, rows

    def _q3(self, params, now):
        """Hosts with the most tasks aborted or finished-with-errors in the
        last minute (all tied maxima)."""
        lo, hi = self._window(now)
        plan = GroupAgg(
            Select(
                Source(
                    "work_queue",
                    {"and": [{"atom": ["end_time", ">=", lo]}, {"atom": ["end_time", "<=", hi]}]},
                ),
                {
                    "or": [
                        {"atom": ["status", "=", "ABORTED"]},
                        {
                            "and": [
                                {"atom": ["status", "=", "FINISHED"]},
                                {"atom": ["failure_trials", ">", 0]},
                            ]
                        },
                    ]
                },
            ),
            keys=("worker_id",),
            aggs=(("count", None, "n_tasks"),),
        )
        rel = _eval(plan, self._snapshot)
        if not rel.rows:
            return ["hostname", "n_tasks"], []
        by_host: dict[str, int] = {}
        for r in rel.rows:
            host = self.worker_host(r["worker_id"]) or f"worker-{r['worker_id']}"
            by_host[host] = by_host.get(host, 0) + r["n_tasks"]
        top = max(by_host.values())
        rows = [[h, n] for h, n in sorted(by_host.items()) if n == top]
        return ["hostname", "n_tasks"], rows

    def _q4(self, params, now):
        """Tasks left to execute for one workflow."""
        workflow_id = params.get("workflow", params.get("workflow_id", ""))
        total = _eval(
            GroupAgg(
                Source("work_queue", {"atom": ["workflow_id", "=", workflow_id]}),
                keys=(),
                aggs=(("count", None, "n"),),
            ),
            self._snapshot,
        )
        if not total.rows:
            return ["tasks_left"], []
        left = _eval(
            GroupAgg(
                Source(
                    "work_queue",
                    {
                        "and": [
                            {"atom": ["workflow_id", "=", workflow_id]},
                            {"atom": ["status", "in", ["READY", "RUNNING"]]},
                        ]
                    },
                ),
                keys=(),
                aggs=(("count", None, "n"),),
            ),
            self._snapshot,
        )
        n = left.rows[0]["n"] if left.rows else 0
        return ["tasks_left"], [[n]]

    def _q5(self, params, now):
        """For workflows running over a minute: activities with the most
        unfinished tasks."""
        started = _eval(
            GroupAgg(
                Source("work_queue", None),
                keys=("workflow_id",),
                aggs=(("min", "start_time", "first_start"),),
            ),
            self._snapshot,
        )
        old_enough = {
            r["workflow_id"]
            for r in started.rows
            if r["first_start"] is not None and now - r["first_start"] > WINDOW_MS
        }
        if not old_enough:
            return ["activity_name", "n_unfinished"], []
        unfinished = _eval(
            GroupAgg(
                Source(
                    "work_queue",
                    {
                        "and": [
                            {"atom": ["workflow_id", "in", sorted(old_enough)]},
                            {"atom": ["status", "in", ["READY", "RUNNING"]]},
                        ]
                    },
                ),
                keys=("activity_id",),
                aggs=(("count", None, "n_unfinished"),),
            ),
            self._snapshot,
        )
        if not unfinished.rows:
            return ["activity_name", "n_unfinished"], []
        top = max(r["n_unfinished"] for r in unfinished.rows)
        names = self._activity_names()
        rows = sorted(
            [
                [names.get(r["activity_id"], r["activity_id"]), r["n_unfinished"]]
                for r in unfinished.rows
                if r["n_unfinished"] == top
            ]
        )
        return ["activity_name", "n_unfinished"], rows

    def _q6(self, params, now):
        """Average and maximum execution time of finished tasks per activity,
        slowest activities first. Activities with no finished tasks are
        omitted rather than reported as nulls."""
        plan = OrderBy(
            GroupAgg(
                Source(
                    "work_queue",
                    {
                        "and": [
                            {"atom": ["status", "=", "FINISHED"]},
                        ]
                    },
                ),
                keys=("activity_id",),
                aggs=(
                    ("avg", "duration_ms", "avg_duration_ms"),
                    ("max", "duration_ms", "max_duration_ms"),
                ),
            ),
            keys=(("avg_duration_ms", True), ("max_duration_ms", True), ("activity_id", False)),
        )
        rel = _eval(plan, self._snapshot)
        names = self._activity_names()
        rows = [
            [names.get(r["activity_id"], r["activity_id"]), r["avg_duration_ms"], r["max_duration_ms"]]
            for r in rel.rows
            if r["avg_duration_ms"] is not None
        ]
        return ["activity_name", "avg_duration_ms", "max_duration_ms"], rows

    def _q7(self, params, now):
        """Pre-processing outputs whose downstream wear figure crossed the
        threshold, reached by joining back through provenance derivation.
        Only reported while Calculate Wear and Tear runs slower than the
        mean over all activities' finished tasks."""
        threshold = params.get("threshold", 0.5)
        pre_id = self._activity_by_name("Pre-Processing")
        cwt_id = self._activity_by_name("Calculate Wear and Tear")
        cols = ["cx", "cy", "cz", "raw_file_path"]
        if pre_id is None or cwt_id is None:
            return cols, []

        def mean_duration(extra_atoms) -> float | None:
            rel = _eval(
                GroupAgg(
                    Source(
                        "work_queue",
                        {"and": [{"atom": ["status", "=", "FINISHED"]}] + extra_atoms},
                    ),
                    keys=(),
                    aggs=(("avg", "duration_ms", "avg_ms"),),
                ),
                self._snapshot,
            )
            return rel.rows[0]["avg_ms"] if rel.rows else None

        cwt_avg = mean_duration([{"atom": ["activity_id", "=", cwt_id]}])
        all_avg = mean_duration([])
        if cwt_avg is None or all_avg is None or cwt_avg <= all_avg:
            return cols, []
        path = self._activity_path(pre_id, cwt_id)
        if path is None:
            return cols, []
        # Equi-join chain over (tuple.produced_by_task = task.task_id) and
        # (task.input_tuple_ids ∋ upstream tuple), one hop per activity edge.
        tuples = self.session.snapshot("domain_tuples")
        tasks = self.session.snapshot("work_queue")
        tuple_by_id = {r["tuple_id"]: r for r in tuples}
        inputs_of_task = {r["task_id"]: r.get("input_tuple_ids", []) for r in tasks}
        frontier = [
            r
            for r in tuples
            if r["activity_id"] == cwt_id
            and r.get("produced_by_task") is not None
            and isinstance(r["fields"].get("fl"), (int, float))
            and r["fields"]["fl"] > threshold
        ]
        for upstream in reversed(path[:-1]):
            nxt = []
            for row in frontier:
                producer = row.get("produced_by_task")
                if producer is None:
                    continue
                for tid in inputs_of_task.get(producer, []):
                    up = tuple_by_id.get(tid)
                    if up is not None and up["activity_id"] == upstream:
                        nxt.append(up)
            frontier = nxt
        seen = set()
        rows = []
        for r in sorted(frontier, key=lambda r: r["tuple_id"]):
            if r["tuple_id"] in seen:
                continue
            seen.add(r["tuple_id"])
            f = r["fields"]
            rows.append([f.get("cx"), f.get("cy"), f.get("cz"), r.get("raw_file_path")])
        return cols, rows

    # -- helpers -----------------------------------------------------------

    def _activity_names(self) -> dict:
        wf = self.workflow_json() or {}
        return {a["activity_id"]: a.get("name", a["activity_id"]) for a in wf.get("activities", [])}

    def _activity_by_name(self, name: str) -> str | None:
        wf = self.workflow_json() or {}
        for a in wf.get("activities", []):
            if a.get("name", "").lower() == name.lower():
                return a["activity_id"]
        return None

    def _activity_path(self, from_id: str, to_id: str) -> list | None:
        """Upstream chain from_id -> ... -> to_id following workflow edges."""
        wf = self.workflow_json() or {}
        edges = [(e[0], e[1]) for e in wf.get("edges", [])]
        path = [to_id]
        current = to_id
        for _ in range(len(wf.get("activities", [])) + 1):
            ups = [u for (u, v) in edges if v == current]
            if not ups:
                return None
            current = ups[0]
            path.append(current)
            if current == from_id:
                return list(reversed(path))
        return None


