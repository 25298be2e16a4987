from .workloads import WorkloadSpec, generate_workload, expected_task_count
from .experiments import ExperimentCell, run_cell, run_experiment, write_csv

__all__ = [
    "WorkloadSpec",
    "generate_workload",
    "expected_task_count",
    "ExperimentCell",
    "run_cell",
    "run_experiment",
    "write_csv",
]
