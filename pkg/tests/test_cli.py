"""CLI lifecycle: the start/setup/run/query/shutdown session, plus verbs."""

import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from schaladb.cli import _parse_params, main, parse_table_expr
from schaladb.errors import SchalaError
from schaladb.queries import Limit, OrderBy, Source

REPO = Path(__file__).resolve().parent.parent


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    shutil.copy(REPO / "configs" / "single-machine.json", tmp_path / "topo.json")
    shutil.copy(REPO / "configs" / "demo-workflow.json", tmp_path / "wf.json")
    shutil.copy(REPO / "configs" / "demo-inputs.json", tmp_path / "in.json")
    monkeypatch.setenv("SCHALADB_CONFIG", str(tmp_path / "topo.json"))
    monkeypatch.chdir(tmp_path)
    yield tmp_path
    # make sure no daemon leaks across tests
    rt = tmp_path / ".schaladb-runtime.json"
    if rt.exists():
        try:
            pid = json.loads(rt.read_text()).get("pid")
            if pid:
                os.kill(int(pid), 15)
        except (ValueError, ProcessLookupError, PermissionError):
            pass


class TestLifecycleSession:
    def test_full_session(self, workdir, capsys):
        assert main(["start"]) == 0
        assert main(["setup", "--create"]) == 0
        assert main(["run", "--workflow", "wf.json", "--inputs", "in.json"]) == 0
        assert main(["query", "-q", "work_queue where status = RUNNING order by start_time"]) == 0
        assert main(["query", "-q", "Q4", "--param", "workflow=wf-demo-run"]) == 0
        out = capsys.readouterr().out
        assert "12 finished" in out
        assert main(["shutdown"]) == 0

    def test_run_before_setup_names_the_missing_step(self, workdir, capsys):
        assert main(["start"]) == 0
        code = main(["run", "--workflow", "wf.json", "--inputs", "in.json"])
        assert code == 1
        err = capsys.readouterr().err
        assert "database not created" in err
        assert main(["shutdown"]) == 0

    def test_query_without_daemon_fails_cleanly(self, workdir, capsys):
        code = main(["query", "-q", "Q4"])
        assert code == 1
        assert "schaladb start" in capsys.readouterr().err

    def test_steer_verb_round_trip(self, workdir, capsys):
        assert main(["start"]) == 0
        assert main(["setup", "--create"]) == 0
        assert main(["run", "--workflow", "wf.json", "--inputs", "in.json"]) == 0
        # workflow is COMPLETE: nothing is READY, so steering affects nothing
        assert main(["steer", "update", "--activity", "a3", "--where", "a < 99", "--set", "a=1"]) == 0
        out = capsys.readouterr().out
        assert "affected 0 task(s)" in out
        assert main(["shutdown"]) == 0

    def test_start_twice_is_an_error(self, workdir, capsys):
        assert main(["start"]) == 0
        assert main(["start"]) == 1
        assert "already running" in capsys.readouterr().out
        assert main(["shutdown"]) == 0


class TestBenchVerb:
    def test_tiny_grid(self, workdir, capsys, tmp_path):
        grid = [
            {"n_tasks": 12, "mean_task_ms": 5, "n_activities": 3, "workers": 2, "threads": 2, "seed": 1}
        ]
        (tmp_path / "grid.json").write_text(json.dumps(grid))
        code = main(["bench", "breakdown", "--grid", str(tmp_path / "grid.json"),
                     "--out", str(tmp_path / "out.csv")])
        assert code == 0
        assert (tmp_path / "out.csv").exists()
        assert "breakdown" in capsys.readouterr().out


class TestExpressionParsing:
    def test_full_expression(self):
        plan = parse_table_expr("work_queue where status = RUNNING order by start_time limit 5")
        assert isinstance(plan, Limit) and plan.n == 5
        order = plan.child
        assert isinstance(order, OrderBy) and order.keys == (("start_time", False),)
        source = order.child
        assert isinstance(source, Source) and source.table == "work_queue"
        assert source.where == {"atom": ["status", "=", "RUNNING"]}

    def test_bare_table(self):
        plan = parse_table_expr("domain_tuples")
        assert isinstance(plan, Source) and plan.where is None

    def test_descending_order(self):
        plan = parse_table_expr("work_queue order by task_id desc")
        assert plan.keys == (("task_id", True),)

    def test_param_parsing(self):
        assert _parse_params(["a=1", "b=2.5", "c=x"]) == {"a": 1, "b": 2.5, "c": "x"}
        with pytest.raises(SchalaError):
            _parse_params(["broken"])


class TestServeFixtureSubprocess:
    def test_fixture_server_answers_status(self, tmp_path):
        import socket
        import time
        import urllib.request

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        proc = subprocess.Popen(
            [sys.executable, "-m", "schaladb.cli", "serve", "--fixture", "--port", str(port)],
            stdout=subprocess.DEVNULL,
            stderr=subprocess.DEVNULL,
        )
        try:
            deadline = time.time() + 10
            body = None
            while time.time() < deadline:
                try:
                    with urllib.request.urlopen(f"http://127.0.0.1:{port}/api/status") as r:
                        body = json.loads(r.read())
                    break
                except OSError:
                    time.sleep(0.1)
            assert body is not None and body["ok"]
            assert sum(body["tasks_by_status"].values()) == 12
        finally:
            proc.terminate()
            proc.wait(timeout=5)
