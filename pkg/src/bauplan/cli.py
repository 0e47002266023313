"""Git-like command line surface.

Configuration precedence per setting: command-line flags, then the
BAUPLAN_WAREHOUSE / BAUPLAN_USER environment variables, then the
workspace file `.bauplan/workspace.json` in the working directory. The
current branch always lives in the workspace file.

Exit codes: 0 success, 1 user error (bad refs, conflicts, failed runs),
2 system error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import catalog, pipeline, run_store, runtime
from .canonical import canonical_json_bytes
from .errors import (
    BauplanError,
    IoFailure,
    RefNotFound,
    WritePermissionDenied,
)
from .object_store import LocalObjectStore
from .sql import execute_query, parse_sql
from .table_format import ResultSet, read_table

_USER_RE = re.compile(r"^[a-z0-9_]+$")

WORKSPACE_DIR = ".bauplan"
WORKSPACE_FILE = "workspace.json"


@dataclass
class Workspace:
    warehouse_root: str
    current_branch: str
    user: str


def _workspace_path(cwd: Path) -> Path:
    return cwd / WORKSPACE_DIR / WORKSPACE_FILE


def load_workspace(cwd: Path) -> Workspace | None:
    path = _workspace_path(cwd)
    if not path.is_file():
        return None
    obj = json.loads(path.read_text("utf-8"))
    return Workspace(obj["warehouse_root"], obj["current_branch"],
                     obj["user"])


def save_workspace(cwd: Path, ws: Workspace) -> None:
    path = _workspace_path(cwd)
    path.parent.mkdir(exist_ok=True)
    path.write_text(json.dumps({
        "warehouse_root": ws.warehouse_root,
        "current_branch": ws.current_branch,
        "user": ws.user,
    }, indent=2) + "\n", "utf-8")


def _resolve_workspace(args, cwd: Path) -> Workspace:
    file_ws = load_workspace(cwd)
    warehouse = args.warehouse or os.environ.get("BAUPLAN_WAREHOUSE") \
        or (file_ws.warehouse_root if file_ws else None)
    user = args.user or os.environ.get("BAUPLAN_USER") \
        or (file_ws.user if file_ws else None)
    if warehouse is None:
        raise BauplanError("no warehouse configured; pass --warehouse, set "
                           "BAUPLAN_WAREHOUSE, or run `bauplan init`")
    if user is None:
        raise BauplanError("no user configured; pass --user or set "
                           "BAUPLAN_USER")
    if not _USER_RE.match(user):
        raise BauplanError(f"invalid user name {user!r}")
    # The current branch is workspace state; without a file it is main.
    branch = file_ws.current_branch if file_ws else "main"
    return Workspace(str(warehouse), branch, user)


def _store(ws: Workspace) -> LocalObjectStore:
    return LocalObjectStore(ws.warehouse_root, create=False)


def _value_text(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _print_result_set(out, rs: ResultSet, as_json: bool) -> None:
    if as_json:
        payload = {
            "schema": [{"name": c.name, "nullable": c.nullable,
                        "type": c.type} for c in rs.schema.columns],
            "rows": [list(row) for row in rs.rows],
        }
        out.write(canonical_json_bytes(payload).decode("utf-8") + "\n")
        return
    for row in rs.rows:
        out.write("\t".join(_value_text(v) for v in row) + "\n")


# --- commands ---------------------------------------------------------------


def _cmd_init(args, cwd: Path, out, err) -> int:
    warehouse = args.warehouse or os.environ.get("BAUPLAN_WAREHOUSE")
    user = args.user or os.environ.get("BAUPLAN_USER")
    if warehouse is None or user is None:
        raise BauplanError("init requires --warehouse and --user (or the "
                           "BAUPLAN_WAREHOUSE / BAUPLAN_USER variables)")
    if not _USER_RE.match(user):
        raise BauplanError(f"invalid user name {user!r}")
    store = LocalObjectStore(warehouse, create=True)
    ref = catalog.init_catalog(store, author=user)
    save_workspace(cwd, Workspace(str(Path(warehouse).resolve()), "main",
                                  user))
    out.write(f"initialized warehouse at {warehouse} "
              f"(main @ {ref.head[:12]})\n")
    return 0


def _cmd_branch(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    if args.name != "main" and not args.name.startswith(ws.user + "."):
        raise WritePermissionDenied(
            f"cannot create branch {args.name!r}: not owned by {ws.user!r}")
    ref = catalog.create_branch(store, args.name,
                                args.from_ref or ws.current_branch)
    out.write(f"created branch {ref.name} at {ref.head[:12]}\n")
    return 0


def _cmd_checkout(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    created = False
    if catalog.ref_exists(store, args.ref):
        pass
    elif args.ref.startswith(ws.user + "."):
        catalog.create_branch(store, args.ref, ws.current_branch)
        created = True
    else:
        raise RefNotFound(f"no branch {args.ref!r} (only your own "
                          f"'{ws.user}.*' branches are auto-created)")
    ws.current_branch = args.ref
    save_workspace(cwd, ws)
    suffix = " (created)" if created else ""
    out.write(f"switched to {args.ref}{suffix}\n")
    return 0


def _cmd_log(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    for commit in catalog.log(store, args.ref or ws.current_branch):
        out.write(f"{commit.hash} {commit.created_at} {commit.author} "
                  f"{commit.message}\n")
    return 0


def _cmd_diff(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    for entry in catalog.diff(store, args.from_ref, args.to_ref):
        out.write(f"{entry.change}\t{entry.table_name}\n")
    return 0


def _run_merge_gate(store, source_ref: str, project: Path, out) -> None:
    """Re-run every expectation step against the source branch head."""
    steps = pipeline.load_project(project)
    expectations = [s for s in steps if s.kind == "expectation"]
    head = catalog.read_ref(store, source_ref)
    for step in expectations:
        inputs = {
            t: read_table(store, catalog.resolve_table(store, head, t))
            for t in sorted(pipeline.step_input_tables(step))
        }
        runtime.execute_step(store, step, inputs)
        out.write(f"check {step.name}: ok\n")


def _cmd_merge(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    target = args.into or ws.current_branch
    if args.require_checks:
        project = Path(args.project) if args.project else cwd
        _run_merge_gate(store, args.source, project, out)
    commit = catalog.merge(store, args.source, target, author=ws.user)
    out.write(f"merged {args.source} into {target}: {commit.hash[:12]}\n")
    return 0


def _cmd_run(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    original = None
    if args.run_id is not None:
        code_dir, input_commit, original = run_store.resolve_replay(
            store, args.run_id)
        if ws.current_branch == original.target_ref:
            raise WritePermissionDenied(
                f"replay must target a different branch than the original "
                f"run's {original.target_ref!r}; checkout a debug branch")
        steps = pipeline.load_project(code_dir)
        code_hash, blobs = pipeline.code_snapshot_hash(code_dir)
        at_commit = input_commit
    else:
        project = Path(args.project) if args.project else cwd
        steps = pipeline.load_project(project)
        code_hash, blobs = pipeline.code_snapshot_hash(project)
        at_commit = None
    graph = pipeline.build_dag(steps)
    plan = runtime.plan_run(store, graph, ws.current_branch, ws.user,
                            at_commit=at_commit)
    manifest = runtime.execute_run(store, plan, code_hash, blobs, ws.user,
                                   all_or_nothing=args.all_or_nothing)
    if args.json:
        payload = run_store.manifest_to_json_dict(manifest)
        if original is not None:
            payload["replay_of"] = original.run_id
            payload["replay_comparison"] = [
                {"step": name, "result": verdict}
                for name, verdict in
                run_store.compare_fingerprints(original, manifest)]
        out.write(canonical_json_bytes(payload).decode("utf-8") + "\n")
    else:
        for result in manifest.step_results:
            line = f"{result.name}: {result.status}"
            if result.error:
                line += f" ({result.error})"
            out.write(line + "\n")
        if original is not None:
            for name, verdict in run_store.compare_fingerprints(
                    original, manifest):
                out.write(f"replay {name}: {verdict}\n")
            for name, fp in sorted(
                    original.environment_fingerprints.items()):
                if manifest.environment_fingerprints.get(name) != fp:
                    err.write(f"warning: environment fingerprint of "
                              f"{name!r} differs from run "
                              f"{original.run_id}\n")
        out.write(f"run {manifest.run_id}: {manifest.status}\n")
        if manifest.output_commit:
            out.write(f"output commit: {manifest.output_commit[:12]}\n")
    return 0 if manifest.status == "succeeded" else 1


def _cmd_query(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    commitish = args.ref or ws.current_branch
    commit_hash = catalog.resolve_commitish(store, commitish)
    query = parse_sql(args.sql)

    def resolve(name: str) -> ResultSet:
        return read_table(store, catalog.resolve_table(store, commit_hash,
                                                       name))

    result = execute_query(query, resolve)
    _print_result_set(out, result, args.json)
    return 0


def _cmd_runs(args, cwd: Path, out, err) -> int:
    ws = _resolve_workspace(args, cwd)
    store = _store(ws)
    manifests = run_store.list_runs(store)
    if args.json:
        payload = [run_store.manifest_to_json_dict(m) for m in manifests]
        out.write(canonical_json_bytes(payload).decode("utf-8") + "\n")
    else:
        for m in manifests:
            out.write(f"{m.run_id}\t{m.status}\t{m.target_ref}\t"
                      f"{m.started_at}\n")
    return 0


# --- dispatch ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bauplan",
        description="Replayable data pipelines over a git-like data catalog")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--warehouse", help="warehouse root directory")
        p.add_argument("--user", help="acting user name")
        return p

    command("init", "create a warehouse and workspace")

    p = command("branch", "create a branch")
    p.add_argument("name")
    p.add_argument("--from", dest="from_ref", default=None)

    p = command("checkout", "switch branches (auto-create own)")
    p.add_argument("ref")

    p = command("log", "commit history of a ref")
    p.add_argument("ref", nargs="?", default=None)

    p = command("diff", "table-level diff of two refs/commits")
    p.add_argument("from_ref")
    p.add_argument("to_ref")

    p = command("merge", "merge a branch into another")
    p.add_argument("source")
    p.add_argument("--into", default=None)
    p.add_argument("--require-checks", action="store_true",
                   dest="require_checks")
    p.add_argument("--project", default=None)

    p = command("run", "run the project pipeline or replay a run")
    p.add_argument("--id", dest="run_id", type=int, default=None)
    p.add_argument("--project", default=None)
    p.add_argument("--all-or-nothing", action="store_true",
                   dest="all_or_nothing")
    p.add_argument("--json", action="store_true")

    p = command("query", "run a SELECT against a ref")
    p.add_argument("sql")
    p.add_argument("--ref", default=None)
    p.add_argument("--json", action="store_true")

    p = command("runs", "list stored runs")
    p.add_argument("--json", action="store_true")

    return parser


_HANDLERS = {
    "init": _cmd_init,
    "branch": _cmd_branch,
    "checkout": _cmd_checkout,
    "log": _cmd_log,
    "diff": _cmd_diff,
    "merge": _cmd_merge,
    "run": _cmd_run,
    "query": _cmd_query,
    "runs": _cmd_runs,
}


def dispatch(argv: list[str], stdout=None, stderr=None,
             cwd: str | Path | None = None) -> int:
    """Parse and execute one command; returns the process exit code."""
    out = stdout if stdout is not None else sys.stdout
    err = stderr if stderr is not None else sys.stderr
    where = Path(cwd) if cwd is not None else Path.cwd()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return 1
    try:
        return _HANDLERS[args.command](args, where, out, err)
    except IoFailure as e:
        err.write(f"error: {e.name}: {e}\n")
        return 2
    except BauplanError as e:
        err.write(f"error: {e.name}: {e}\n")
        return 1
    except Exception as e:  # noqa: BLE001 - last-resort guard for the CLI
        err.write(f"error: internal: {type(e).__name__}: {e}\n")
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
