"""Command-line lifecycle.

    schaladb start                 bring up data nodes and connectors (daemon)
    schaladb setup --create        initialize the partitioned tables
    schaladb run --workflow f.json [--inputs in.json]
    schaladb query -q Q4 --param workflow=wf1
    schaladb steer update --activity a5 --where "a < 0.6" --set a=9.9
    schaladb bench db_overhead --grid grid.json --out results.csv
    schaladb serve --port 8080     HTTP API (add --fixture for a demo state)
    schaladb shutdown

The topology config resolves from --config, then $SCHALADB_CONFIG, then the
packaged single-machine default. `start` spawns a background process that
owns the store; every other verb connects to it over TCP, so queries and
steering work from any shell while a workflow runs.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import subprocess
import sys
import time
from pathlib import Path

from .connector import TcpConnectorServer, distribute
from .engine import Engine, EngineConfig, TcpHandle
from .errors import ConnectorDown, SchalaError, StoreError
from .model import ClusterTopology, WorkflowSpec, validate_workflow
from . import predicate as pred_mod
from .queries import PREDEFINED, Limit, OrderBy, QueryService, Select, Source
from .store.client import StoreSession
from .store.cluster import StoreCluster
from .store.tcp import serve_cluster_node
from . import steering

ENV_CONFIG = "SCHALADB_CONFIG"
DEFAULT_RUNTIME = ".schaladb-runtime.json"


# --------------------------------------------------------------------- config


def resolve_config_path(flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    env = os.environ.get(ENV_CONFIG)
    if env:
        return Path(env)
    local = Path("configs/single-machine.json")
    if local.exists():
        return local
    import importlib.resources as resources

    ref = resources.files("schaladb").joinpath("data/single_machine.json")
    return Path(str(ref))


def load_config(path: Path) -> dict:
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise SchalaError(f"topology config not found: {path}")
    except ValueError as exc:
        raise SchalaError(f"bad topology config {path}: {exc}")
    return cfg


def runtime_path(config_path: Path, flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    return config_path.resolve().parent / DEFAULT_RUNTIME


def load_runtime(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise SchalaError(
            f"no engine runtime found at {path}; run `schaladb start` first"
        )


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def client_session(runtime: dict, node_id: str = "cli") -> StoreSession:
    handles = [
        TcpHandle(host, port)
        for _, (host, port) in sorted(runtime.get("connectors", {}).items())
    ]
    if not handles:
        raise SchalaError("runtime file lists no connectors")
    return StoreSession(node_id, handles)


# --------------------------------------------------------------------- daemon


def cmd_daemon(args) -> int:
    config_path = resolve_config_path(args.config)
    cfg = load_config(config_path)
    topo = ClusterTopology.from_config(cfg)
    errors, warnings = topo.validate()
    if errors:
        print("bad topology: " + "; ".join(errors), file=sys.stderr)
        return 1
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    node_ids = [d.ident for d in topo.data_nodes]
    cluster = StoreCluster(node_ids)
    node_servers = {}
    for spec in cfg["data_nodes"]:
        server = serve_cluster_node(cluster, spec["id"], port=int(spec.get("port", 0)))
        node_servers[spec["id"]] = server
    node_addrs = {nid: ("127.0.0.1", s.port) for nid, s in node_servers.items()}
    connector_servers = {}
    for spec in cfg["connectors"]:
        server = TcpConnectorServer(spec["id"], node_addrs, port=int(spec.get("port", 0)))
        server.start()
        connector_servers[spec["id"]] = server
    rt_path = runtime_path(config_path, args.runtime_file)
    rt_path.write_text(
        json.dumps(
            {
                "pid": os.getpid(),
                "config_path": str(config_path.resolve()),
                "data_nodes": {nid: ["127.0.0.1", s.port] for nid, s in node_servers.items()},
                "connectors": {cid: ["127.0.0.1", s.port] for cid, s in connector_servers.items()},
            },
            indent=2,
        )
    )
    print(f"store up: {len(node_servers)} data node(s), {len(connector_servers)} connector(s)")
    stop = {"flag": False}

    def on_signal(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    try:
        while not stop["flag"]:
            state = cluster.execute("meta_get", {"key": "engine_state"})["value"]
            if state == "SHUTDOWN":
                break
            time.sleep(0.2)
    finally:
        for server in connector_servers.values():
            server.stop()
        for server in node_servers.values():
            server.stop()
        try:
            rt_path.unlink()
        except FileNotFoundError:
            pass
    return 0


def cmd_start(args) -> int:
    config_path = resolve_config_path(args.config)
    load_config(config_path)  # fail fast on a broken config
    rt_path = runtime_path(config_path, args.runtime_file)
    if rt_path.exists():
        try:
            rt = json.loads(rt_path.read_text())
            if _pid_alive(int(rt.get("pid", -1))):
                print(f"engine already running (pid {rt['pid']}); shut it down first")
                return 1
        except ValueError:
            pass
        rt_path.unlink()
    if args.foreground:
        fake = argparse.Namespace(config=str(config_path), runtime_file=str(rt_path))
        return cmd_daemon(fake)
    log_path = rt_path.with_suffix(".log")
    with open(log_path, "ab") as log:
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "schaladb.cli",
                "--config",
                str(config_path),
                "--runtime-file",
                str(rt_path),
                "_daemon",
            ],
            stdout=log,
            stderr=log,
            start_new_session=True,
        )
    deadline = time.time() + 15
    while time.time() < deadline:
        if rt_path.exists():
            try:
                runtime = load_runtime(rt_path)
                client_session(runtime).call("ping", {})
                print(f"store up (pid {proc.pid}); runtime: {rt_path}")
                return 0
            except (SchalaError, StoreError, ConnectorDown, ValueError):
                pass
        if proc.poll() is not None:
            print(f"daemon exited early; see {log_path}", file=sys.stderr)
            return 1
        time.sleep(0.1)
    print("timed out waiting for the daemon to come up", file=sys.stderr)
    return 1


def cmd_shutdown(args) -> int:
    config_path = resolve_config_path(args.config)
    rt_path = runtime_path(config_path, args.runtime_file)
    try:
        runtime = load_runtime(rt_path)
    except SchalaError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    try:
        client_session(runtime).meta_put("engine_state", "SHUTDOWN")
    except (StoreError, ConnectorDown, SchalaError) as exc:
        print(f"could not reach the store ({exc}); removing stale runtime", file=sys.stderr)
        rt_path.unlink(missing_ok=True)
        return 1
    pid = int(runtime.get("pid", -1))
    deadline = time.time() + 10
    while time.time() < deadline and _pid_alive(pid):
        time.sleep(0.1)
    print("engine shut down")
    return 0


# ---------------------------------------------------------------------- setup


def _require_state(session: StoreSession, allowed: tuple, verb: str, hint: str) -> None:
    state = session.meta_get("engine_state") or "INIT"
    if state not in allowed:
        raise SchalaError(f"`{verb}` not allowed in state {state}: {hint}")


def cmd_setup(args) -> int:
    if not args.create:
        print("nothing to do (pass --create to initialize tables)", file=sys.stderr)
        return 1
    config_path = resolve_config_path(args.config)
    cfg = load_config(config_path)
    topo = ClusterTopology.from_config(cfg)
    runtime = load_runtime(runtime_path(config_path, args.runtime_file))
    session = client_session(runtime)
    result = session.call(
        "setup_tables", {"W": topo.W, "replicate": bool(cfg.get("replicate", True))}
    )
    session.meta_put(
        "topology",
        {
            "workers": {w.ident: w.node for w in topo.workers},
            "data_nodes": [d.ident for d in topo.data_nodes],
            "connectors": [c.ident for c in topo.connectors],
            "threads_per_worker": topo.threads_per_worker,
        },
    )
    for warning in result.get("warnings", []):
        print(f"warning: {warning}")
    print(f"tables created: {topo.W} partition(s) over {topo.D} data node(s)")
    return 0


def cmd_run(args) -> int:
    config_path = resolve_config_path(args.config)
    cfg = load_config(config_path)
    topo = ClusterTopology.from_config(cfg)
    runtime = load_runtime(runtime_path(config_path, args.runtime_file))
    session = client_session(runtime)
    _require_state(
        session,
        ("DB_CREATED", "COMPLETE"),
        "run",
        "database not created (run `schaladb setup --create` first)",
    )
    try:
        wf_doc = json.loads(Path(args.workflow).read_text())
    except (OSError, ValueError) as exc:
        print(f"cannot read workflow: {exc}", file=sys.stderr)
        return 1
    workflow = WorkflowSpec.from_json(wf_doc)
    report = validate_workflow(workflow)
    if not report.ok:
        print("invalid workflow:", file=sys.stderr)
        for e in report.errors:
            print(f"  - {e}", file=sys.stderr)
        return 1
    if args.inputs:
        inputs = json.loads(Path(args.inputs).read_text())
    else:
        inputs = wf_doc.get("inputs", [])
    state = session.meta_get("engine_state")
    if state == "COMPLETE":
        # One workflow per engine run: re-running resets the tables.
        session.call("setup_tables", {"W": topo.W, "replicate": bool(cfg.get("replicate", True))})
    engine_cfg = EngineConfig(**(cfg.get("engine") or {}))
    engine_cfg.seed = args.seed if args.seed is not None else engine_cfg.seed
    connector_addrs = {
        cid: (host, port) for cid, (host, port) in runtime.get("connectors", {}).items()
    }
    engine = Engine.attached(topo, connector_addrs, engine_cfg)
    result = engine.run(workflow, inputs)
    print(
        f"workflow {workflow.workflow_id}: {result.status_counts.get('FINISHED', 0)} finished, "
        f"{result.status_counts.get('ABORTED', 0)} aborted, "
        f"{result.elapsed_ms / 1000.0:.2f}s elapsed"
    )
    metrics = result.metrics
    print(
        f"store access max-sum {metrics['access_ms_maxsum'] / 1000.0:.2f}s "
        f"({_fraction(metrics['access_ms_maxsum'], result.elapsed_ms)} of elapsed)"
    )
    if result.errors:
        for e in result.errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def _fraction(part: float, whole: float) -> str:
    return f"{100.0 * part / whole:.1f}%" if whole else "n/a"


# ---------------------------------------------------------------------- query


def parse_table_expr(text: str):
    """`<table> [where <predicate>] [order by <col> [desc]] [limit <n>]`"""
    lowered = text.lower()
    table = text.split()[0]
    rest = text[len(table):]
    where_part = order_part = limit_part = None
    lw = lowered[len(table):]
    w = lw.find(" where ")
    o = lw.find(" order by ")
    l = lw.find(" limit ")
    ends = sorted(x for x in (o, l, len(lw)) if x >= 0)
    if w >= 0:
        where_part = rest[w + 7 : ends[0] if ends[0] > w else len(rest)].strip()
    if o >= 0:
        end = l if l > o else len(rest)
        order_part = rest[o + 10 : end].strip()
    if l >= 0:
        limit_part = rest[l + 7 :].strip()
    plan = Source(table, pred_mod.parse(where_part).to_json() if where_part else None)
    if order_part:
        tokens = order_part.split()
        desc = len(tokens) > 1 and tokens[1].lower() == "desc"
        plan = OrderBy(plan, ((tokens[0], desc),))
    if limit_part:
        plan = Limit(plan, int(limit_part.split()[0]))
    return plan


def _print_result(result, csv_path: str | None) -> None:
    cols = result.columns
    widths = [len(str(c)) for c in cols]
    rendered = []
    for row in result.rows:
        cells = [_cell(v) for v in row]
        rendered.append(cells)
        widths = [max(w, len(c)) for w, c in zip(widths, cells)]
    header = "  ".join(str(c).ljust(w) for c, w in zip(cols, widths))
    print(header)
    print("  ".join("-" * w for w in widths))
    for cells in rendered:
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    print(f"({len(result.rows)} row(s), {result.elapsed_ms:.1f} ms)")
    if csv_path:
        import csv as csv_mod

        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv_mod.writer(fh)
            writer.writerow(cols)
            writer.writerows(result.rows)
        print(f"wrote {csv_path}")


def _cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".6g")
    if v is None:
        return ""
    return str(v)


def _parse_params(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise SchalaError(f"--param expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key] = _scalar(value)
    return out


def _scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def cmd_query(args) -> int:
    config_path = resolve_config_path(args.config)
    runtime = load_runtime(runtime_path(config_path, args.runtime_file))
    session = client_session(runtime, node_id="cli-query")
    _require_state(
        session,
        ("DB_CREATED", "RUNNING", "COMPLETE"),
        "query",
        "database not created",
    )
    params = _parse_params(args.param)
    now = params.pop("now", None)
    service = QueryService(session)
    if args.q.upper() in PREDEFINED:
        result = service.run_predefined(args.q.upper(), params, now=now)
    else:
        result = service.eval(parse_table_expr(args.q), now=now)
    _print_result(result, args.csv)
    return 0


def cmd_steer(args) -> int:
    config_path = resolve_config_path(args.config)
    runtime = load_runtime(runtime_path(config_path, args.runtime_file))
    session = client_session(runtime, node_id="cli-steer")
    pred = pred_mod.parse(args.where) if args.where else pred_mod.TRUE
    assignments = _parse_params(args.set)
    if args.verb == "update":
        action = steering.steer_update_inputs(session, args.activity, pred, assignments)
    else:
        action = steering.steer_prune(session, args.activity, pred)
    ids = list(action.affected_task_ids)
    print(f"steering action {action.action_id} ({action.kind}) affected {len(ids)} task(s)")
    if ids:
        print("  " + ", ".join(str(i) for i in ids))
    return 0


def cmd_bench(args) -> int:
    from .harness.experiments import run_experiment, summarize
    from .harness.workloads import WorkloadSpec

    grid_doc = json.loads(Path(args.grid).read_text())
    grid = [WorkloadSpec(**cell) for cell in grid_doc]
    cells = run_experiment(args.kind, grid, out_csv=args.out)
    print(summarize(cells), end="")
    if args.out:
        print(f"wrote {args.out}")
    return 0 if all(c.ok for c in cells) else 1


def cmd_serve(args) -> int:
    from .service import ApiServer, ServiceBackend

    if args.fixture:
        from .connector import LocalConnector
        from .demo import build_demo_cluster

        cluster = build_demo_cluster()
        session = StoreSession("service", [LocalConnector("c1", cluster)])
    else:
        config_path = resolve_config_path(args.config)
        runtime = load_runtime(runtime_path(config_path, args.runtime_file))
        session = client_session(runtime, node_id="service")
    backend = ServiceBackend(session)
    server = ApiServer(backend, port=args.port)
    print(f"serving HTTP API on http://127.0.0.1:{server.port}/api/v1/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schaladb", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help=f"topology config path (or ${ENV_CONFIG})")
    parser.add_argument("--runtime-file", help="override the daemon runtime file location")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("start", help="launch data nodes and connectors")
    p.add_argument("--foreground", action="store_true")
    p.set_defaults(fn=cmd_start)

    p = sub.add_parser("_daemon")  # internal
    p.set_defaults(fn=cmd_daemon)

    p = sub.add_parser("setup", help="initialize tables")
    p.add_argument("--create", action="store_true")
    p.set_defaults(fn=cmd_setup)

    p = sub.add_parser("run", help="execute a workflow and block until done")
    p.add_argument("--workflow", required=True)
    p.add_argument("--inputs")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("query", help="run Q1..Q7 or a table expression")
    p.add_argument("-q", required=True, help="Q1..Q7 or `table [where ...] [order by ...]`")
    p.add_argument("--param", action="append", help="key=value (repeatable)")
    p.add_argument("--csv", help="also write the result as CSV")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("steer", help="adapt the next ready tasks")
    p.add_argument("verb", choices=("update", "prune"))
    p.add_argument("--activity", required=True)
    p.add_argument("--where", help="predicate, e.g. \"a < 0.6 AND b >= 10\"")
    p.add_argument("--set", action="append", help="field=value (update only, repeatable)")
    p.set_defaults(fn=cmd_steer)

    p = sub.add_parser("bench", help="run an experiment grid")
    p.add_argument("kind")
    p.add_argument("--grid", required=True, help="JSON list of workload cells")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="HTTP API for consoles and scripts")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--fixture", action="store_true", help="serve a canned demo state")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("shutdown", help="stop the daemon")
    p.set_defaults(fn=cmd_shutdown)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SchalaError, StoreError, ConnectorDown) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
