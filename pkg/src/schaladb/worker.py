"""Worker node: execution threads fed from the node's own partition.

One coordinator thread claims batches of ready tasks sized to the number of
idle execution threads; each execution thread runs its task (synthetic sleep
plus a pure output function, or an external command), extracts domain
outputs, and commits the result in a single store transaction. Empty claims
back off exponentially (50 ms doubling to 500 ms, reset on success).
"""

from __future__ import annotations

import queue
import subprocess
import threading
import time
from dataclasses import dataclass

from .errors import ConnectorsExhausted, SchalaError, StoreError, StoreUnavailable
from .model import ActivitySpec, Operator, Task, WorkflowSpec
from .store.client import StoreSession
from . import synthetic


class ExtractionError(SchalaError):
    pass


def extract_outputs(std_out: str, output_schema) -> dict:
    """Parses space-separated key=value pairs from a task's stdout.

    Numeric values become numbers; keys outside the schema are ignored;
    a schema key that never appears is an error.
    """
    found: dict = {}
    for token in std_out.split():
        if "=" not in token:
            raise ExtractionError(f"malformed pair: {token!r}")
        key, value = token.split("=", 1)
        if key not in output_schema:
            continue
        found[key] = _parse_scalar(value)
    missing = [k for k in output_schema if k not in found]
    if missing:
        raise ExtractionError(f"missing {', '.join(missing)}")
    return found


def _parse_scalar(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def render_stdout(fields: dict, output_schema) -> str:
    parts = []
    for key in output_schema:
        value = fields[key]
        if isinstance(value, float):
            parts.append(f"{key}={value!r}")  # shortest round-trip form
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


@dataclass
class WorkerConfig:
    worker_id: int
    threads: int = 1
    claim_batch: int | None = None  # None: one per idle thread
    retry_max: int = 3
    backoff_initial_ms: int = 50
    backoff_cap_ms: int = 500
    primary_connector: str = ""
    secondary_connector: str | None = None

    def __post_init__(self):
        if self.threads < 1:
            raise SchalaError("threads must be >= 1")


@dataclass
class ExecutionEnv:
    """How this engine run executes task bodies."""

    workflow: WorkflowSpec
    seed: int = 0
    synthetic: bool = True
    failure_probability: float = 0.0
    sleep_scale: float = 1.0  # tests can compress synthetic durations

    def activity(self, activity_id: str) -> ActivitySpec:
        return self.workflow.activity(activity_id)


def execute_task(task: Task, inputs: list, env: ExecutionEnv) -> tuple[str, list[dict], bool]:
    """Runs one claimed task; returns (std_out, output field dicts, success)."""
    act = env.activity(task.activity_id)
    if env.synthetic:
        return _execute_synthetic(task, inputs, act, env)
    return _execute_external(task, act)


def _execute_synthetic(task: Task, inputs, act: ActivitySpec, env: ExecutionEnv):
    duration = synthetic.sample_duration_ms(env.seed, task.task_id, act.mean_duration_ms)
    if duration > 0:
        time.sleep(duration * env.sleep_scale / 1000.0)
    if synthetic.draw_failure(env.seed, task.task_id, task.failure_trials, env.failure_probability):
        return ("synthetic failure injected", [], False)
    fn_key = act.synthetic_fn or "generic_map"
    input_fields = [dict(t.fields) for t in inputs]
    try:
        if act.operator is Operator.REDUCE:
            fn = synthetic.REDUCE_FUNCTIONS[fn_key]
            outputs = fn(input_fields)
        else:
            fn = synthetic.MAP_FUNCTIONS[fn_key]
            merged: dict = {}
            for f in input_fields:
                merged.update(f)
            outputs = fn(merged)
    except (KeyError, TypeError, ZeroDivisionError) as exc:
        return (f"synthetic function failed: {exc!r}", [], False)
    if not outputs:
        return ("", [], True)  # FILTER dropped its tuple
    std_out = render_stdout(outputs[0], act.output_schema)
    return (std_out, outputs, True)


def _execute_external(task: Task, act: ActivitySpec):
    try:
        proc = subprocess.run(
            task.command_line,
            shell=True,
            cwd=task.workspace or None,
            capture_output=True,
            text=True,
            timeout=max(act.mean_duration_ms / 1000.0 * 20, 60),
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        return (f"spawn failed: {exc}", [], False)
    std_out = proc.stdout.strip()
    if proc.returncode != 0:
        return (std_out or f"exit code {proc.returncode}", [], False)
    try:
        fields = extract_outputs(std_out, act.output_schema)
    except ExtractionError:
        return (std_out, [], False)
    return (std_out, [fields], True)


class WorkerNode:
    """Claim/dispatch coordinator plus a pool of execution threads."""

    def __init__(
        self,
        config: WorkerConfig,
        session: StoreSession,
        env: ExecutionEnv,
        on_execute=None,
    ):
        self.config = config
        self.session = session
        self.env = env
        self.on_execute = on_execute
        self._stop = threading.Event()
        self._crashed = threading.Event()
        self._queue: queue.Queue = queue.Queue()
        self._inflight = 0
        self._inflight_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self.error: Exception | None = None

    # lifecycle ---------------------------------------------------------

    def start(self) -> None:
        for i in range(self.config.threads):
            t = threading.Thread(
                target=self._executor_loop,
                args=(i + 1,),
                daemon=True,
                name=f"worker-{self.config.worker_id}-exec-{i + 1}",
            )
            t.start()
            self._threads.append(t)
        coord = threading.Thread(
            target=self._coordinator_loop,
            daemon=True,
            name=f"worker-{self.config.worker_id}-claim",
        )
        coord.start()
        self._threads.append(coord)

    def stop(self) -> None:
        self._stop.set()

    def crash(self) -> None:
        """Simulates a process crash: in-flight work is never reported, so
        its tasks stick at RUNNING until the lease scan resets them."""
        self._crashed.set()
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self._threads:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            t.join(remaining)

    # loops --------------------------------------------------------------

    def _coordinator_loop(self) -> None:
        backoff_ms = self.config.backoff_initial_ms
        while not self._stop.is_set():
            with self._inflight_lock:
                idle = self.config.threads - self._inflight
            if idle <= 0:
                time.sleep(0.002)
                continue
            want = idle if self.config.claim_batch is None else min(idle, self.config.claim_batch)
            try:
                tasks = self.session.claim_ready_tasks(self.config.worker_id, want)
            except ConnectorsExhausted as exc:
                # no broker left to talk to: exit with a diagnostic; the
                # lease scan recovers whatever this worker had in flight
                self.error = exc
                self._stop.set()
                return
            except (StoreUnavailable, StoreError) as exc:
                self.error = exc
                if isinstance(exc, StoreUnavailable):
                    self._stop.wait(backoff_ms / 1000.0)
                    backoff_ms = min(backoff_ms * 2, self.config.backoff_cap_ms)
                    continue
                self._stop.set()
                return
            if tasks:
                backoff_ms = self.config.backoff_initial_ms
                with self._inflight_lock:
                    self._inflight += len(tasks)
                for task in tasks:
                    self._queue.put(task)
            else:
                self._stop.wait(backoff_ms / 1000.0)
                backoff_ms = min(backoff_ms * 2, self.config.backoff_cap_ms)

    def _executor_loop(self, thread_index: int) -> None:
        while not self._stop.is_set():
            try:
                task = self._queue.get(timeout=0.05)
            except queue.Empty:
                continue
            try:
                self._run_one(task, thread_index)
            finally:
                with self._inflight_lock:
                    self._inflight -= 1

    def _run_one(self, task: Task, thread_index: int) -> None:
        if self.on_execute is not None:
            self.on_execute(task.task_id)
        try:
            inputs = self._with_outage_retry(
                lambda: self.session.fetch_task_inputs(task.task_id)
            )
            std_out, outputs, ok = execute_task(task, inputs, self.env)
            if self._crashed.is_set():
                return  # a crashed worker never reports results
            if ok:
                self._with_outage_retry(
                    lambda: self.session.complete_task(
                        task.task_id,
                        std_out,
                        [{"fields": f, "raw_file_path": f.get("raw_file_path")} for f in outputs],
                        core_slot=thread_index,
                    )
                )
            else:
                self._with_outage_retry(
                    lambda: self.session.fail_task(
                        task.task_id, self.config.retry_max, std_out=std_out or "task failed"
                    )
                )
        except StoreError as exc:
            if exc.code == "illegal_transition":
                return  # lease recovery already reassigned the task
            self.error = exc

    def _with_outage_retry(self, fn, attempts: int = 5):
        """Retries through a transient store outage (promotion in progress);
        completion replay is idempotent so a duplicate commit only acks."""
        for i in range(attempts - 1):
            try:
                return fn()
            except StoreUnavailable:
                if self._stop.wait(0.1 * (i + 1)):
                    raise
        return fn()
