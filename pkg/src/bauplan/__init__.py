"""Desk-scale lakehouse engine with git-like branching and replayable runs."""

from .catalog import (
    Commit,
    Ref,
    REMOVE,
    TableDiff,
    commit_tables,
    create_branch,
    diff,
    init_catalog,
    log,
    merge,
    merge_base,
    resolve_table,
)
from .errors import BauplanError
from .object_store import LocalObjectStore
from .pipeline import (
    PipelineGraph,
    Step,
    build_dag,
    code_snapshot_hash,
    load_project,
    topo_order,
)
from .run_store import (
    RunManifest,
    StepResult,
    allocate_run_id,
    load_manifest,
    resolve_replay,
    save_manifest,
)
from .runtime import RunPlan, execute_run, execute_step, plan_run
from .sql import execute_query, extract_table_refs, infer_output_schema, parse_sql
from .table_format import (
    Column,
    DataFile,
    ResultSet,
    Schema,
    TableSnapshot,
    decode_csv,
    encode_csv,
    read_table,
    snapshot_hash,
    validate_rows,
    write_table,
)

__version__ = "0.1.0"

__all__ = [
    "BauplanError", "Column", "Commit", "DataFile", "LocalObjectStore",
    "PipelineGraph", "Ref", "REMOVE", "ResultSet", "RunManifest", "RunPlan",
    "Schema", "Step", "StepResult", "TableDiff", "TableSnapshot",
    "allocate_run_id", "build_dag", "code_snapshot_hash", "commit_tables",
    "create_branch", "decode_csv", "diff", "encode_csv", "execute_query",
    "execute_run", "execute_step", "extract_table_refs", "infer_output_schema",
    "init_catalog", "load_manifest", "load_project", "log", "merge",
    "merge_base", "parse_sql", "plan_run", "read_table", "resolve_replay",
    "resolve_table", "save_manifest", "snapshot_hash", "topo_order",
    "validate_rows", "write_table",
]
