#!/usr/bin/env python3
"""A guided in-process tour: run a workflow, query it, steer it.

    python scripts/demo_run.py
"""

import os
import sys
import threading
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from schaladb.engine import Engine, EngineConfig, simple_topology
from schaladb.harness.workloads import WorkloadSpec, generate_workload
from schaladb.predicate import parse
from schaladb.queries import QueryService
from schaladb import steering


def main() -> int:
    spec = WorkloadSpec(n_tasks=210, mean_task_ms=40, n_activities=7, workers=4, threads=2, seed=7)
    workflow, inputs = generate_workload(spec)
    engine = Engine.local(
        simple_topology(W=4, D=2, C=2, threads=2, replicate=True),
        EngineConfig(poll_interval_ms=20, seed=7),
    )

    def observe_and_steer():
        session = engine.make_client_session("console")
        service = QueryService(session)
        steered = False
        while True:
            time.sleep(0.4)
            counts = session.call("status_counts", {})["totals"]
            print(f"  [monitor] {counts}")
            if counts["FINISHED"] and not steered:
                ready = session.snapshot(
                    "work_queue",
                    {"and": [{"atom": ["activity_id", "=", "a5"]},
                             {"atom": ["status", "=", "READY"]}]},
                )
                if ready:
                    action = steering.steer_update_inputs(
                        session, "a5", parse("fl >= 0"), {"fl": 0.95}
                    )
                    print(f"  [steer] action {action.action_id} touched tasks "
                          f"{list(action.affected_task_ids)[:8]}...")
                    steered = True
            if sum(counts.values()) and counts["READY"] + counts["RUNNING"] == 0:
                q6 = service.run_predefined("Q6")
                print("  [query] slowest activities:",
                      [(r[0], round(r[1], 1)) for r in q6.rows[:3]])
                return

    monitor = threading.Thread(target=observe_and_steer, daemon=True)
    monitor.start()
    result = engine.run(workflow, inputs)
    monitor.join(timeout=5)
    print(f"done: {result.status_counts} in {result.elapsed_ms / 1000.0:.2f}s; "
          f"store access max-sum {result.metrics['access_ms_maxsum'] / 1000.0:.2f}s")
    return 0 if result.all_finished else 1


if __name__ == "__main__":
    raise SystemExit(main())
