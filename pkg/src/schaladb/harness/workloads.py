"""Synthetic workload generation.

A workload is a linear chain of activities fed by ceil(n_tasks /
n_activities) input tuples with fields a, b, c drawn from the seed. Chains
of five or more activities take the riser-fatigue shape the bundled
queries know about: activity 2 is Pre-Processing (cx, cy, cz plus a raw
file pointer and its size), activity 4 is Calculate Wear and Tear (fl),
activity 5 is Analyze Risers. Shorter chains alternate the generic
a,b,c -> x,y stage with a refresh stage.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..model import Operator, WorkflowSpec


@dataclass(frozen=True)
class WorkloadSpec:
    n_tasks: int
    mean_task_ms: int
    n_activities: int = 7
    operator_mix: str = "map_only"  # or "reduce_final"
    workers: int = 2
    threads: int = 1
    data_nodes: int = 1
    replicate: bool = False
    seed: int = 0
    query_cadence_ms: int | None = None
    failure_injections: tuple = ()
    failure_probability: float = 0.0

    def __post_init__(self):
        if self.n_tasks < self.n_activities:
            raise ConfigError("n_tasks must be >= n_activities")
        if self.operator_mix not in ("map_only", "reduce_final"):
            raise ConfigError(f"unknown operator mix: {self.operator_mix}")

    @property
    def n_inputs(self) -> int:
        return math.ceil(self.n_tasks / self.n_activities)

    def params(self) -> dict:
        return {
            "n_tasks": self.n_tasks,
            "mean_task_ms": self.mean_task_ms,
            "n_activities": self.n_activities,
            "operator_mix": self.operator_mix,
            "workers": self.workers,
            "threads": self.threads,
            "data_nodes": self.data_nodes,
            "replicate": self.replicate,
            "seed": self.seed,
            "query_cadence_ms": self.query_cadence_ms or 0,
        }


_RISERS_STAGES = [
    # (name, input schema, output schema, synthetic fn, template)
    (
        "Ingest Conditions",
        ("a", "b", "c"),
        ("wind", "wave", "depth"),
        "load_cases",
        "/run ingest a={a} b={b} c={c}",
    ),
    (
        "Pre-Processing",
        ("wind", "wave", "depth"),
        ("cx", "cy", "cz", "raw_file_path", "size_bytes"),
        "pre_processing",
        "/run preprocess wind={wind} wave={wave} depth={depth}",
    ),
    (
        "Stress Analysis",
        ("cx", "cy", "cz", "raw_file_path", "size_bytes"),
        ("stress", "strain"),
        "stress_analysis",
        "/run stress cx={cx} cy={cy} cz={cz}",
    ),
    (
        "Calculate Wear and Tear",
        ("stress", "strain"),
        ("fl", "wear"),
        "wear_and_tear",
        "/run wear stress={stress} strain={strain}",
    ),
    (
        "Analyze Risers",
        ("fl", "wear"),
        ("risk", "margin"),
        "analyze_risers",
        "/run analyze fl={fl} wear={wear}",
    ),
]
_PADDING_STAGE = (
    ("risk", "margin"),
    ("risk", "margin"),
    "damp",
    "/run damp risk={risk} margin={margin}",
)
_PADDING_NAMES = ("Fatigue Accumulation", "Consolidate Results")


def _risers_chain(n: int) -> list[dict]:
    stages = []
    for i in range(n):
        if i < len(_RISERS_STAGES):
            name, ins, outs, fn, template = _RISERS_STAGES[i]
        else:
            ins, outs, fn, template = _PADDING_STAGE
            k = i - len(_RISERS_STAGES)
            name = _PADDING_NAMES[k] if k < len(_PADDING_NAMES) else f"Post Stage {k + 1}"
        stages.append(
            {
                "activity_id": f"a{i + 1}",
                "name": name,
                "operator": "MAP",
                "command_template": template,
                "input_schema": list(ins),
                "output_schema": list(outs),
                "synthetic_fn": fn,
            }
        )
    return stages


def _generic_chain(n: int) -> list[dict]:
    stages = []
    for i in range(n):
        if i % 2 == 0:
            ins, outs, fn = ("a", "b", "c"), ("x", "y"), "generic_map"
            template = "/run a={a} b={b} c={c}"
        else:
            ins, outs, fn = ("x", "y"), ("a", "b", "c"), "refresh_inputs"
            template = "/run x={x} y={y}"
        stages.append(
            {
                "activity_id": f"a{i + 1}",
                "name": f"stage {i + 1}",
                "operator": "MAP",
                "command_template": template,
                "input_schema": list(ins),
                "output_schema": list(outs),
                "synthetic_fn": fn,
            }
        )
    return stages


def generate_workload(spec: WorkloadSpec) -> tuple[WorkflowSpec, list[dict]]:
    """Returns (workflow, input tuple field maps); fully seed-determined."""
    n = spec.n_activities
    stages = _risers_chain(n) if n >= 5 else _generic_chain(n)
    if spec.operator_mix == "reduce_final":
        last = stages[-1]
        last["operator"] = "REDUCE"
        last["output_schema"] = ["count", "total"]
        last["synthetic_fn"] = "reduce_summary"
        last["command_template"] = "/run reduce-all"
    for stage in stages:
        stage["mean_duration_ms"] = spec.mean_task_ms
    edges = [[f"a{i}", f"a{i + 1}"] for i in range(1, n)]
    workflow = WorkflowSpec.from_json(
        {
            "workflow_id": f"wf-{spec.seed}-{spec.n_tasks}x{spec.mean_task_ms}",
            "activities": stages,
            "edges": edges,
        }
    )
    rng = random.Random(spec.seed)
    inputs = [
        {
            "a": round(rng.uniform(0.1, 3.0), 2),
            "b": round(rng.uniform(5.0, 40.0), 2),
            "c": round(rng.uniform(5.0, 30.0), 2),
        }
        for _ in range(spec.n_inputs)
    ]
    return workflow, inputs


def expected_task_count(workflow: WorkflowSpec, n_inputs: int) -> int:
    """Walks the DAG: MAP/FILTER yield one task per upstream tuple, REDUCE
    one task total. Assumes no FILTER drops (the oracle for map chains)."""
    from ..model import topo_order

    tuples: dict[str, int] = {}
    total = 0
    for aid in topo_order(workflow):
        act = workflow.activity(aid)
        ups = workflow.upstream_of(aid)
        upstream_tuples = n_inputs if not ups else sum(tuples[u] for u in ups)
        if act.operator is Operator.REDUCE:
            n_tasks_here = 1
            tuples[aid] = 1
        else:
            n_tasks_here = upstream_tuples
            tuples[aid] = upstream_tuples
        total += n_tasks_here
    return total
