"""Experiment runners: desk-scale analogs of the benchmark suite.

Each cell runs one workload to completion in-process, verifies every task
finished (unless the cell injects aborts), and reports elapsed time plus
store-access accounting: the per-node maximum summed access time, its
fraction of elapsed, and the per-category breakdown. Output is CSV plus a
human-readable summary; plotting stays external.

Experiment kinds:
  strong                    same workload, growing thread counts
  weak                      workload grows with thread count
  workload_tasks            fixed duration, growing task counts
  workload_duration         fixed task count, growing durations
  db_overhead               access-time fraction versus task duration
  breakdown                 category shares of access time
  query_overhead            paired runs with and without a query cycle
  centralized_vs_distributed same cell under both scheduling modes
"""

from __future__ import annotations

import csv
import io
import os
import threading
import time
from dataclasses import dataclass, field, replace

from ..engine import Engine, EngineConfig, simple_topology
from ..errors import SchalaError, StoreError
from ..queries import PREDEFINED, QueryService
from ..store.metrics import CATEGORIES
from .workloads import WorkloadSpec, expected_task_count, generate_workload

KINDS = (
    "strong",
    "weak",
    "workload_tasks",
    "workload_duration",
    "db_overhead",
    "breakdown",
    "query_overhead",
    "centralized_vs_distributed",
)

# Desk-scale supervisor cadence: generation latency stays negligible next to
# the tens-of-milliseconds tasks the cells use.
HARNESS_POLL_MS = 20


@dataclass
class ExperimentCell:
    spec: WorkloadSpec
    mode: str = "distributed"
    elapsed_ms: float = 0.0
    access_ms_maxsum: float = 0.0
    access_fraction: float = 0.0
    per_category_ms: dict = field(default_factory=dict)
    breakdown_pct: dict = field(default_factory=dict)
    status_counts: dict = field(default_factory=dict)
    n_tasks: int = 0
    throughput_tps: float = 0.0
    ok: bool = True
    notes: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {"kind": self.notes.get("kind", ""), "mode": self.mode}
        out.update(self.spec.params())
        out.update(
            {
                "elapsed_ms": round(self.elapsed_ms, 3),
                "access_ms_maxsum": round(self.access_ms_maxsum, 3),
                "access_fraction": round(self.access_fraction, 6),
                "throughput_tps": round(self.throughput_tps, 3),
                "n_tasks": self.n_tasks,
                "n_finished": self.status_counts.get("FINISHED", 0),
                "n_aborted": self.status_counts.get("ABORTED", 0),
                "n_ready": self.status_counts.get("READY", 0),
                "n_running": self.status_counts.get("RUNNING", 0),
                "ok": int(self.ok),
            }
        )
        for c in CATEGORIES:
            out[f"ms_{c}"] = round(self.per_category_ms.get(c, 0.0), 3)
        for key, value in sorted(self.notes.items()):
            if key != "kind":
                out[f"note_{key}"] = value
        return out


CSV_COLUMNS = [
    "kind",
    "mode",
    "n_tasks",
    "mean_task_ms",
    "n_activities",
    "operator_mix",
    "workers",
    "threads",
    "data_nodes",
    "replicate",
    "seed",
    "query_cadence_ms",
    "elapsed_ms",
    "access_ms_maxsum",
    "access_fraction",
    "throughput_tps",
    "n_finished",
    "n_aborted",
    "n_ready",
    "n_running",
    "ok",
] + [f"ms_{c}" for c in CATEGORIES]


class QueryCycler(threading.Thread):
    """Runs the predefined query set against a live engine on a cadence."""

    def __init__(self, engine: Engine, workflow_id: str, interval_ms: int):
        super().__init__(daemon=True, name="query-cycler")
        self.engine = engine
        self.workflow_id = workflow_id
        self.interval_s = interval_ms / 1000.0
        self.stop = threading.Event()
        self.queries_run = 0
        self.errors = 0

    def run(self) -> None:
        session = self.engine.make_client_session("query-client")
        service = QueryService(session)
        host = next(iter(self.engine.topology.workers)).node
        while not self.stop.wait(self.interval_s):
            for q in PREDEFINED:
                if self.stop.is_set():
                    return
                params = {}
                if q == "Q2":
                    params = {"hostname": host}
                elif q == "Q4":
                    params = {"workflow": self.workflow_id}
                try:
                    service.run_predefined(q, params)
                    self.queries_run += 1
                except (StoreError, SchalaError):
                    self.errors += 1


class FaultInjector(threading.Thread):
    """Applies scheduled failures to a running engine."""

    def __init__(self, engine: Engine, injections):
        super().__init__(daemon=True, name="fault-injector")
        self.engine = engine
        self.injections = sorted(injections, key=lambda i: i["after_ms"])
        self.stop = threading.Event()
        self.applied: list = []

    def run(self) -> None:
        t0 = time.perf_counter()
        for inj in self.injections:
            delay = inj["after_ms"] / 1000.0 - (time.perf_counter() - t0)
            if delay > 0 and self.stop.wait(delay):
                return
            action = inj["action"]
            target = inj.get("target")
            try:
                if action == "kill_connector":
                    self.engine.kill_connector(target)
                elif action == "kill_data_node":
                    self.engine.kill_data_node(target)
                elif action == "kill_worker":
                    self.engine.kill_worker(int(target))
                elif action == "restart_worker":
                    self.engine.restart_worker(int(target))
                elif action == "kill_supervisor":
                    self.engine.kill_primary_supervisor()
                else:
                    raise SchalaError(f"unknown injection: {action}")
                self.applied.append(inj)
            except (StoreError, KeyError) as exc:
                self.applied.append({**inj, "error": str(exc)})


def run_cell(
    spec: WorkloadSpec,
    mode: str = "distributed",
    engine_config: EngineConfig | None = None,
    on_execute=None,
    secondary_supervisor: bool = False,
) -> tuple[ExperimentCell, Engine]:
    """Runs one workload cell to completion and measures it."""
    workflow, inputs = generate_workload(spec)
    hw = os.cpu_count() or 1
    if spec.workers * spec.threads > 4 * hw:
        import warnings

        warnings.warn(
            f"cell wants {spec.workers * spec.threads} threads on {hw} hardware threads",
            stacklevel=2,
        )
    topo = simple_topology(
        W=spec.workers,
        D=spec.data_nodes,
        C=max(1, min(2, spec.workers)),
        threads=spec.threads,
        replicate=spec.replicate,
        secondary_supervisor=secondary_supervisor,
    )
    config = engine_config or EngineConfig()
    config.mode = mode
    config.seed = spec.seed
    config.poll_interval_ms = min(config.poll_interval_ms, HARNESS_POLL_MS)
    config.failure_probability = spec.failure_probability
    config.run_secondary_supervisor = secondary_supervisor
    engine = Engine.local(topo, config)
    engine.on_execute = on_execute
    cycler = None
    if spec.query_cadence_ms:
        cycler = QueryCycler(engine, workflow.workflow_id, spec.query_cadence_ms)
    injector = None
    if spec.failure_injections:
        injector = FaultInjector(engine, [dict(i) for i in spec.failure_injections])

    if cycler:
        cycler.start()
    if injector:
        injector.start()
    result = engine.run(workflow, inputs)
    if cycler:
        cycler.stop.set()
        cycler.join(timeout=5)
    if injector:
        injector.stop.set()
        injector.join(timeout=5)

    metrics = result.metrics
    cell = ExperimentCell(
        spec=spec,
        mode=mode,
        elapsed_ms=result.elapsed_ms,
        access_ms_maxsum=metrics["access_ms_maxsum"],
        access_fraction=(
            metrics["access_ms_maxsum"] / result.elapsed_ms if result.elapsed_ms > 0 else 0.0
        ),
        per_category_ms=metrics["per_category_ms"],
        breakdown_pct=metrics["breakdown_pct"],
        status_counts=result.status_counts,
        n_tasks=result.n_tasks,
        throughput_tps=(
            result.status_counts.get("FINISHED", 0) / (result.elapsed_ms / 1000.0)
            if result.elapsed_ms > 0
            else 0.0
        ),
    )
    expected = expected_task_count(workflow, spec.n_inputs)
    injected_aborts = bool(spec.failure_injections) or spec.failure_probability > 0
    cell.ok = (
        not result.errors
        and result.n_tasks == expected
        and (injected_aborts or result.all_finished)
    )
    if cycler:
        cell.notes["queries_run"] = cycler.queries_run
    if result.errors:
        cell.notes["errors"] = "; ".join(result.errors)
    return cell, engine


def run_experiment(
    kind: str,
    grid: list[WorkloadSpec],
    out_csv: str | None = None,
    engine_config: EngineConfig | None = None,
) -> list[ExperimentCell]:
    if kind not in KINDS:
        raise SchalaError(f"unknown experiment kind: {kind}")
    cells: list[ExperimentCell] = []
    for spec in grid:
        if kind == "query_overhead":
            quiet = replace(spec, query_cadence_ms=None)
            cell_q, _ = run_cell(quiet, engine_config=_clone(engine_config))
            cell_q.notes["kind"] = kind
            cell_q.notes["arm"] = "no_queries"
            cells.append(cell_q)
            noisy = spec if spec.query_cadence_ms else replace(spec, query_cadence_ms=2000)
            cell_n, _ = run_cell(noisy, engine_config=_clone(engine_config))
            cell_n.notes["kind"] = kind
            cell_n.notes["arm"] = "with_queries"
            if cell_q.elapsed_ms > 0:
                cell_n.notes["delta_pct"] = round(
                    100.0 * (cell_n.elapsed_ms - cell_q.elapsed_ms) / cell_q.elapsed_ms, 2
                )
            cells.append(cell_n)
        elif kind == "centralized_vs_distributed":
            cell_d, _ = run_cell(spec, mode="distributed", engine_config=_clone(engine_config))
            cell_d.notes["kind"] = kind
            cells.append(cell_d)
            cell_c, _ = run_cell(spec, mode="centralized", engine_config=_clone(engine_config))
            cell_c.notes["kind"] = kind
            if cell_d.elapsed_ms > 0:
                cell_c.notes["ratio_centralized_over_distributed"] = round(
                    cell_c.elapsed_ms / cell_d.elapsed_ms, 3
                )
            cells.append(cell_c)
        else:
            cell, _ = run_cell(spec, engine_config=_clone(engine_config))
            cell.notes["kind"] = kind
            cells.append(cell)
    _derive_curves(kind, cells)
    if any(not c.ok for c in cells):
        for c in cells:
            if not c.ok:
                c.notes.setdefault("errors", "cell failed verification")
    if out_csv:
        write_csv(cells, out_csv)
    return cells


def _clone(config: EngineConfig | None) -> EngineConfig:
    if config is None:
        return EngineConfig()
    return EngineConfig(**vars(config))


def _derive_curves(kind: str, cells: list[ExperimentCell]) -> None:
    runnable = [c for c in cells if c.elapsed_ms > 0]
    if not runnable:
        return
    if kind == "strong":
        base = min(runnable, key=lambda c: c.spec.workers * c.spec.threads)
        base_threads = base.spec.workers * base.spec.threads
        for c in runnable:
            scale = (c.spec.workers * c.spec.threads) / base_threads
            c.notes["speedup"] = round(base.elapsed_ms / c.elapsed_ms, 3)
            c.notes["linear_elapsed_ms"] = round(base.elapsed_ms / scale, 3)
    elif kind == "weak":
        base = min(runnable, key=lambda c: c.spec.workers * c.spec.threads)
        for c in runnable:
            c.notes["vs_base_pct"] = round(
                100.0 * (c.elapsed_ms - base.elapsed_ms) / base.elapsed_ms, 2
            )
    elif kind in ("workload_tasks", "db_overhead", "breakdown"):
        base = min(runnable, key=lambda c: c.spec.n_tasks * c.spec.mean_task_ms)
        for c in runnable:
            scale = (c.spec.n_tasks * c.spec.mean_task_ms) / max(
                1, base.spec.n_tasks * base.spec.mean_task_ms
            )
            c.notes["linear_elapsed_ms"] = round(base.elapsed_ms * scale, 3)
    elif kind == "workload_duration":
        # Anchor the linear line at the longest task duration evaluated.
        base = max(runnable, key=lambda c: c.spec.mean_task_ms)
        for c in runnable:
            scale = c.spec.mean_task_ms / base.spec.mean_task_ms
            c.notes["linear_elapsed_ms"] = round(base.elapsed_ms * scale, 3)


def write_csv(cells: list[ExperimentCell], path: str) -> None:
    note_cols = sorted({f"note_{k}" for c in cells for k in c.notes if k != "kind"})
    columns = CSV_COLUMNS + note_cols
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for c in cells:
            writer.writerow(c.row())


def summarize(cells: list[ExperimentCell]) -> str:
    out = io.StringIO()
    for c in cells:
        line = (
            f"{c.notes.get('kind', '?'):28s} {c.mode:12s} "
            f"tasks={c.spec.n_tasks:<6d} mean={c.spec.mean_task_ms:<5d}ms "
            f"W={c.spec.workers}x{c.spec.threads} elapsed={c.elapsed_ms / 1000.0:8.2f}s "
            f"access={c.access_ms_maxsum / 1000.0:7.2f}s ({c.access_fraction * 100.0:5.1f}%) "
            f"{'ok' if c.ok else 'FAILED'}"
        )
        extras = {k: v for k, v in c.notes.items() if k not in ("kind",)}
        if extras:
            line += "  " + " ".join(f"{k}={v}" for k, v in sorted(extras.items()))
        print(line, file=out)
    return out.getvalue()
