"""Project loading and DAG construction.

A project directory declares steps by file naming, dbt-style: the file
name is the output table name. `<name>.sql` is a SQL step, `<name>.check.sql`
an expectation, `<name>.step.json` an external step run as a subprocess.
Dependencies are never declared explicitly: a SQL step depends on whatever
its FROM/JOIN clauses reference, an external step on its manifest's
`inputs`. Referenced names that no step produces are source tables,
resolved against the catalog at run time.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from .canonical import canonical_json_bytes, sha256_hex
from .errors import (
    CycleDetected,
    DuplicateStep,
    IoFailure,
    ManifestError,
)
from .sql import extract_table_refs, parse_sql
from .table_format import Schema

STEP_NAME_RE = re.compile(r"^[a-z_][a-z0-9_]*$")

_MANIFEST_REQUIRED = {"command", "inputs", "output_schema",
                      "environment_fingerprint", "deterministic"}
_MANIFEST_OPTIONAL = {"code_files"}


@dataclass(frozen=True)
class Step:
    name: str
    kind: str  # sql | external | expectation
    sql_text: str | None = None
    command: tuple[str, ...] = ()
    declared_inputs: tuple[str, ...] = ()
    output_schema: Schema | None = None
    environment_fingerprint: str = ""
    deterministic: bool = True
    code_files: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineGraph:
    steps: dict[str, Step]
    edges: tuple[tuple[str, str], ...]  # (producer, consumer)
    source_tables: frozenset[str]


def step_input_tables(step: Step) -> set[str]:
    if step.kind == "external":
        return set(step.declared_inputs)
    return extract_table_refs(parse_sql(step.sql_text))


def _validate_rel_path(raw: str) -> str:
    p = PurePosixPath(raw)
    if p.is_absolute() or ".." in p.parts or not p.parts:
        raise ManifestError(f"code_files entry escapes project dir: {raw!r}")
    return str(p)


def _parse_external_manifest(name: str, raw: bytes) -> Step:
    try:
        obj = json.loads(raw)
    except ValueError as e:
        raise ManifestError(f"{name}.step.json: invalid JSON: {e}")
    if not isinstance(obj, dict):
        raise ManifestError(f"{name}.step.json: expected an object")
    keys = set(obj)
    missing = _MANIFEST_REQUIRED - keys
    unknown = keys - _MANIFEST_REQUIRED - _MANIFEST_OPTIONAL
    if missing:
        raise ManifestError(
            f"{name}.step.json: missing fields {sorted(missing)}")
    if unknown:
        raise ManifestError(
            f"{name}.step.json: unknown fields {sorted(unknown)}")
    command = obj["command"]
    if not isinstance(command, list) or not command \
            or not all(isinstance(c, str) for c in command):
        raise ManifestError(f"{name}.step.json: command must be a "
                            f"non-empty list of strings")
    inputs = obj["inputs"]
    if not isinstance(inputs, list) \
            or not all(isinstance(i, str) and STEP_NAME_RE.match(i)
                       for i in inputs):
        raise ManifestError(f"{name}.step.json: inputs must be a list of "
                            f"table names")
    try:
        schema = Schema.from_json_dict(obj["output_schema"])
    except Exception as e:
        raise ManifestError(f"{name}.step.json: bad output_schema: {e}")
    fingerprint = obj["environment_fingerprint"]
    if not isinstance(fingerprint, str):
        raise ManifestError(
            f"{name}.step.json: environment_fingerprint must be a string")
    deterministic = obj["deterministic"]
    if not isinstance(deterministic, bool):
        raise ManifestError(
            f"{name}.step.json: deterministic must be a boolean")
    code_files = tuple(
        _validate_rel_path(p) for p in obj.get("code_files", []))
    return Step(name=name, kind="external", command=tuple(command),
                declared_inputs=tuple(inputs), output_schema=schema,
                environment_fingerprint=fingerprint,
                deterministic=deterministic, code_files=code_files)


def _step_files(directory: Path) -> list[tuple[str, str, Path]]:
    """(step name, kind, path) for every step file, sorted by file name."""
    out = []
    for path in sorted(directory.iterdir()):
        if not path.is_file():
            continue
        fname = path.name
        if fname.endswith(".check.sql"):
            out.append((fname[:-len(".check.sql")], "expectation", path))
        elif fname.endswith(".step.json"):
            out.append((fname[:-len(".step.json")], "external", path))
        elif fname.endswith(".sql"):
            out.append((fname[:-len(".sql")], "sql", path))
    return out


def load_project(directory: str | Path) -> list[Step]:
    """Read every step file in sorted name order into validated Steps."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"no such project directory: {directory}")
    steps: list[Step] = []
    seen: set[str] = set()
    for name, kind, path in _step_files(directory):
        if not STEP_NAME_RE.match(name):
            raise ManifestError(f"invalid step name {name!r} ({path.name})")
        if name in seen:
            raise DuplicateStep(f"step {name!r} is defined more than once")
        seen.add(name)
        if kind == "external":
            steps.append(_parse_external_manifest(name, path.read_bytes()))
        else:
            text = path.read_text("utf-8")
            parse_sql(text)  # surface ParseError at load time
            steps.append(Step(name=name, kind=kind, sql_text=text))
    return steps


def build_dag(steps: list[Step]) -> PipelineGraph:
    """Infer edges from table references; unknown names become sources."""
    by_name = {s.name: s for s in steps}
    edges: list[tuple[str, str]] = []
    sources: set[str] = set()
    for step in steps:
        for ref in sorted(step_input_tables(step)):
            if ref in by_name:
                edges.append((ref, step.name))
            else:
                sources.add(ref)
    graph = PipelineGraph(by_name, tuple(sorted(edges)), frozenset(sources))
    _assert_acyclic(graph)
    return graph


def _assert_acyclic(graph: PipelineGraph) -> None:
    consumers: dict[str, list[str]] = {}
    for producer, consumer in graph.edges:
        consumers.setdefault(producer, []).append(consumer)
    state: dict[str, int] = {}  # 1 = on stack, 2 = done
    stack_path: list[str] = []

    def visit(name: str):
        state[name] = 1
        stack_path.append(name)
        for nxt in consumers.get(name, ()):
            if state.get(nxt) == 1:
                cycle = stack_path[stack_path.index(nxt):] + [nxt]
                raise CycleDetected(cycle)
            if state.get(nxt) != 2:
                visit(nxt)
        stack_path.pop()
        state[name] = 2

    for name in sorted(graph.steps):
        if state.get(name) != 2:
            visit(name)


def topo_order(graph: PipelineGraph) -> list[str]:
    """Producers before consumers; ties broken by step name."""
    indegree = {name: 0 for name in graph.steps}
    consumers: dict[str, list[str]] = {}
    for producer, consumer in graph.edges:
        indegree[consumer] += 1
        consumers.setdefault(producer, []).append(consumer)
    ready = [name for name, deg in sorted(indegree.items()) if deg == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for nxt in consumers.get(name, ()):
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(ready, nxt)
    return order


def code_snapshot_hash(directory: str | Path) -> tuple[str, dict[str, bytes]]:
    """Hash of the project's code and the blobs backing it.

    The hash covers every step file plus any `code_files` a manifest lists,
    as a canonical JSON list of (relative path, file SHA-256) pairs sorted
    by path.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IoFailure(f"no such project directory: {directory}")
    paths: set[str] = set()
    for name, kind, path in _step_files(directory):
        paths.add(path.name)
        if kind == "external":
            manifest = _parse_external_manifest(name, path.read_bytes())
            paths.update(manifest.code_files)
    blobs: dict[str, bytes] = {}
    for rel in sorted(paths):
        full = directory / rel
        try:
            blobs[rel] = full.read_bytes()
        except OSError as e:
            raise IoFailure(f"cannot read {rel!r}: {e}")
    listing = [[rel, sha256_hex(data)] for rel, data in sorted(blobs.items())]
    return sha256_hex(canonical_json_bytes(listing)), blobs
