"""Run planning and execution.

A plan pins the input commit (normally the target branch head, or a past
run's input commit when replaying) and resolves every source table there.
Execution walks the DAG in topological order, keeps intermediate results
in memory, hands external steps canonical CSV files over a scratch
directory, and lands all succeeded outputs in one atomic multi-table
commit, so readers of the branch see either none of a run's tables or all
of them.

Partial failure: descendants of a failed step are skipped, but succeeded
steps on independent paths still commit (pass ``all_or_nothing=True`` to
refuse any commit when something failed). The whole-run status is
``failed`` as soon as any step is not ``succeeded``.
"""

from __future__ import annotations

import os
import platform
import subprocess
import tempfile
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from . import catalog
from .canonical import content_fingerprint, sha256_hex, utc_now_iso
from .errors import (
    BauplanError,
    ConcurrentUpdate,
    EmptyPipeline,
    ExpectationFailed,
    MissingSource,
    NonzeroExit,
    NotFound,
    OutputMissing,
    SchemaMismatch,
    StepFailed,
    TableNotFound,
)
from .object_store import LocalObjectStore
from .pipeline import PipelineGraph, Step, step_input_tables, topo_order
from .run_store import (
    RunManifest,
    StepResult,
    allocate_run_id,
    save_code_blobs,
    save_manifest,
)
from .sql import execute_query, parse_sql
from .table_format import (
    ResultSet,
    decode_csv,
    encode_csv,
    load_snapshot,
    read_table,
    write_table,
)

LOG_TRUNCATE_BYTES = 64 * 1024


@dataclass(frozen=True)
class RunPlan:
    graph: PipelineGraph
    input_commit: str
    target_ref: str
    step_order: tuple[str, ...]
    resolved_sources: dict[str, str]
    # Head of target_ref at plan time; equals input_commit except on replay.
    target_head: str


def host_descriptor() -> str:
    return (f"{platform.node()};{platform.system()};{platform.release()};"
            f"{platform.machine()};python{platform.python_version()}")


def plan_run(store: LocalObjectStore, graph: PipelineGraph, target_ref: str,
             user: str, at_commit: str | None = None) -> RunPlan:
    """Pin the input commit and resolve every source table at it."""
    if not graph.steps:
        raise EmptyPipeline("pipeline has no steps")
    head = catalog.read_ref(store, target_ref)
    catalog.check_write_permission(target_ref, user)
    input_commit = at_commit if at_commit is not None else head
    resolved: dict[str, str] = {}
    input_tables = catalog.load_commit(store, input_commit).tables
    for table in sorted(graph.source_tables):
        snapshot_id = input_tables.get(table)
        if snapshot_id is None:
            raise MissingSource(
                f"source table {table!r} not found at commit "
                f"{input_commit[:12]}")
        resolved[table] = snapshot_id
    return RunPlan(graph=graph, input_commit=input_commit,
                   target_ref=target_ref,
                   step_order=tuple(topo_order(graph)),
                   resolved_sources=resolved, target_head=head)


def _truncated(data: bytes) -> str:
    return data[:LOG_TRUNCATE_BYTES].decode("utf-8", errors="replace")


def run_external(step: Step, input_paths: dict[str, Path], output_path: Path,
                 run_id: int) -> tuple[bytes, bytes]:
    """Invoke an external step's command under the handoff protocol.

    Inputs arrive as canonical CSV files named by BPLN_INPUT_<TABLE>; the
    command must write canonical CSV matching the declared output schema to
    $BPLN_OUTPUT and exit 0. Returns captured (stdout, stderr).
    """
    env = dict(os.environ)
    for table, path in input_paths.items():
        env[f"BPLN_INPUT_{table.upper()}"] = str(path)
    env["BPLN_OUTPUT"] = str(output_path)
    env["BPLN_RUN_ID"] = str(run_id)
    env["BPLN_STEP_NAME"] = step.name
    proc = subprocess.run(list(step.command), env=env, capture_output=True)
    if proc.returncode != 0:
        raise NonzeroExit(proc.returncode, proc.stdout, proc.stderr)
    if not output_path.is_file():
        raise OutputMissing(f"step {step.name!r} wrote no output CSV")
    payload = output_path.read_bytes()
    try:
        decode_csv(step.output_schema, payload)
    except BauplanError as e:
        raise SchemaMismatch(
            f"step {step.name!r} output does not conform to its declared "
            f"schema: {e}")
    return proc.stdout, proc.stderr


def _run_sql_step(step: Step, inputs: dict[str, ResultSet]) -> ResultSet:
    query = parse_sql(step.sql_text)

    def resolve(name: str) -> ResultSet:
        if name not in inputs:
            raise TableNotFound(f"step {step.name!r}: no input {name!r}")
        return inputs[name]

    return execute_query(query, resolve)


def _check_expectation(step: Step, result: ResultSet) -> None:
    cols = result.schema.columns
    if len(cols) != 1 or cols[0].type != "bool":
        raise StepFailed(
            f"expectation {step.name!r} must produce exactly one bool "
            f"column, got {[(c.name, c.type) for c in cols]}")
    if not result.rows:
        raise ExpectationFailed(
            f"expectation {step.name!r} returned no rows")
    for i, row in enumerate(result.rows):
        if row[0] is not True:
            raise ExpectationFailed(
                f"expectation {step.name!r} is false at row {i}")


def _execute_step_full(step: Step, inputs: dict[str, ResultSet], run_id: int,
                       scratch_dir: Path) -> tuple[ResultSet, bytes, bytes]:
    if step.kind == "external":
        step_dir = scratch_dir / step.name
        step_dir.mkdir(parents=True, exist_ok=True)
        input_paths: dict[str, Path] = {}
        for table in step.declared_inputs:
            rs = inputs[table]
            path = step_dir / f"{table}.csv"
            path.write_bytes(encode_csv(rs.schema, rs.rows))
            input_paths[table] = path
        output_path = step_dir / "output.csv"
        try:
            stdout, stderr = run_external(step, input_paths, output_path,
                                          run_id)
        except NonzeroExit as e:
            raise StepFailed(f"NonzeroExit: {e}", e.stdout, e.stderr)
        except (OutputMissing, SchemaMismatch) as e:
            raise StepFailed(f"{e.name}: {e}")
        rows = decode_csv(step.output_schema, output_path.read_bytes())
        return ResultSet(step.output_schema, rows), stdout, stderr
    try:
        result = _run_sql_step(step, inputs)
    except BauplanError as e:
        if isinstance(e, (StepFailed, TableNotFound)):
            raise
        raise StepFailed(f"{e.name}: {e}")
    if step.kind == "expectation":
        _check_expectation(step, result)
    return result, b"", b""


def execute_step(store: LocalObjectStore, step: Step,
                 inputs: dict[str, ResultSet], run_id: int = 0,
                 scratch_dir: str | Path | None = None) -> ResultSet:
    """Run one step over in-memory inputs; raises StepFailed on any error."""
    scratch = Path(scratch_dir) if scratch_dir is not None \
        else Path(tempfile.mkdtemp(prefix="bauplan-step-"))
    result, _, _ = _execute_step_full(step, inputs, run_id, scratch)
    return result


def execute_run(store: LocalObjectStore, plan: RunPlan, code_hash: str,
                code_blobs: dict[str, bytes], user: str,
                all_or_nothing: bool = False) -> RunManifest:
    """Execute a planned run and persist its manifest.

    Returns the manifest in all outcomes short of store failure; inspect
    `status` and per-step results rather than expecting exceptions.
    """
    started_at = utc_now_iso()
    run_id = allocate_run_id(store)
    blob_keys = save_code_blobs(store, code_blobs)
    scratch = Path(tempfile.mkdtemp(prefix=f"bauplan-run-{run_id}-"))

    input_tables = catalog.load_commit(store, plan.input_commit).tables
    source_cache: dict[str, ResultSet] = {}

    def source_rows(table: str) -> ResultSet:
        if table not in source_cache:
            snapshot = load_snapshot(store, plan.resolved_sources[table])
            source_cache[table] = read_table(store, snapshot)
        return source_cache[table]

    outputs: dict[str, ResultSet] = {}
    dead: set[str] = set()  # failed or skipped step names
    results: list[StepResult] = []
    logs: dict[str, dict[str, str]] = {}
    to_commit: dict[str, str] = {}
    run_error: str | None = None

    for name in plan.step_order:
        step = plan.graph.steps[name]
        refs = sorted(step_input_tables(step))
        upstream_steps = [r for r in refs if r in plan.graph.steps]
        if any(r in dead for r in upstream_steps):
            results.append(StepResult(name, "skipped", None, None,
                                      "upstream step failed", 0))
            dead.add(name)
            continue
        start = time.monotonic()
        try:
            step_inputs = {}
            for r in refs:
                step_inputs[r] = outputs[r] if r in plan.graph.steps \
                    else source_rows(r)
            result, stdout, stderr = _execute_step_full(
                step, step_inputs, run_id, scratch)
            if stdout or stderr:
                logs[name] = {"stdout": _truncated(stdout),
                              "stderr": _truncated(stderr)}
            if step.kind == "expectation":
                fingerprint = content_fingerprint(
                    [sha256_hex(encode_csv(result.schema, result.rows))])
                snapshot_id = None
            else:
                parent = input_tables.get(name)
                if parent is not None:
                    table_uuid = load_snapshot(store, parent).table_uuid
                else:
                    table_uuid = str(uuid.uuid4())
                snapshot = write_table(store, table_uuid, result.schema,
                                       result, parent)
                fingerprint = content_fingerprint(
                    [f.content_hash for f in snapshot.data_files])
                snapshot_id = snapshot.snapshot_id
                to_commit[name] = snapshot_id
            outputs[name] = result
            duration = int((time.monotonic() - start) * 1000)
            results.append(StepResult(name, "succeeded", snapshot_id,
                                      fingerprint, None, duration))
        except BauplanError as e:
            duration = int((time.monotonic() - start) * 1000)
            if isinstance(e, StepFailed) and (e.stdout or e.stderr):
                logs[name] = {"stdout": _truncated(e.stdout),
                              "stderr": _truncated(e.stderr)}
            results.append(StepResult(name, "failed", None, None,
                                      f"{e.name}: {e}", duration))
            dead.add(name)

    status = "succeeded" if all(r.status == "succeeded" for r in results) \
        else "failed"
    output_commit = None
    if to_commit and not (all_or_nothing and status == "failed"):
        try:
            commit = catalog.commit_tables(
                store, plan.target_ref, to_commit, author=user,
                message=f"run {run_id}", expected_head=plan.target_head)
            output_commit = commit.hash
        except ConcurrentUpdate as e:
            status = "failed"
            run_error = f"{e.name}: {e}"
    elif to_commit:
        run_error = "all-or-nothing: commit withheld because a step failed"

    manifest = RunManifest(
        run_id=run_id,
        code_hash=code_hash,
        code_blob_keys=blob_keys,
        input_commit=plan.input_commit,
        target_ref=plan.target_ref,
        output_commit=output_commit,
        step_results=results,
        status=status,
        environment_fingerprints={
            s.name: s.environment_fingerprint
            for s in plan.graph.steps.values() if s.kind == "external"},
        host_descriptor=host_descriptor(),
        started_at=started_at,
        finished_at=utc_now_iso(),
        error=run_error,
        logs=logs,
    )
    save_manifest(store, manifest)
    return manifest
