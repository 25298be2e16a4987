#!/usr/bin/env python3
"""Run the bundled experiment grids and write CSVs + a text summary.

Usage:
    python scripts/run_experiments.py [--out DIR] [--quick]

--quick shrinks every grid so the whole set finishes in under a minute;
without it the grids take several minutes of real (slept) task time.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from schaladb.harness.experiments import run_experiment, summarize
from schaladb.harness.workloads import WorkloadSpec


def grids(quick: bool):
    scale = 0.1 if quick else 1.0

    def n(x):
        return max(7, int(x * scale))

    yield "strong", [
        WorkloadSpec(n_tasks=n(1000), mean_task_ms=20, workers=2, threads=t, seed=1)
        for t in (1, 2, 4)
    ]
    yield "weak", [
        WorkloadSpec(n_tasks=n(250 * t), mean_task_ms=50, workers=2, threads=t, seed=2)
        for t in (1, 2, 4)
    ]
    yield "workload_tasks", [
        WorkloadSpec(n_tasks=n(x), mean_task_ms=20, workers=4, threads=2, seed=3)
        for x in (500, 1000, 2000)
    ]
    yield "workload_duration", [
        WorkloadSpec(n_tasks=n(500), mean_task_ms=ms, workers=4, threads=2, seed=4)
        for ms in (10, 50, 200)
    ]
    yield "db_overhead", [
        WorkloadSpec(n_tasks=n(1000), mean_task_ms=ms, workers=8, threads=4, seed=5)
        for ms in (10, 50, 200, 1000)
    ]
    yield "breakdown", [
        WorkloadSpec(n_tasks=n(1000), mean_task_ms=50, workers=8, threads=4, seed=6)
    ]
    yield "query_overhead", [
        WorkloadSpec(
            n_tasks=n(500), mean_task_ms=100, workers=8, threads=4, seed=7,
            query_cadence_ms=2000,
        )
    ]
    yield "centralized_vs_distributed", [
        WorkloadSpec(n_tasks=n(2000), mean_task_ms=20, workers=8, threads=4, seed=8)
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--quick", action="store_true")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    all_ok = True
    for kind, grid in grids(args.quick):
        csv_path = os.path.join(args.out, f"{kind}.csv")
        cells = run_experiment(kind, grid, out_csv=csv_path)
        print(summarize(cells), end="")
        all_ok = all_ok and all(c.ok for c in cells)
    print(f"\nCSV files in {args.out}/")
    return 0 if all_ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
