"""Immutable table layer: typed row sets, canonical CSV files, snapshots.

A table version is a snapshot: a schema plus an ordered list of immutable
CSV data files, serialized as canonical JSON and content-addressed under
``objects/``. Data files live under ``data/<table-uuid>/<file-uuid>.csv``
and are split at 100,000 rows.

The CSV encoding is bit-exact by construction: UTF-8, LF line endings, a
header row, RFC 4180 quoting applied only when a field contains a comma,
quote, CR, LF, or is the empty string. An empty unquoted field is NULL;
``""`` is the empty string. Floats use the shortest decimal that
round-trips to the same 64-bit value; decoding verifies that every field
re-encodes to the exact bytes it was read from, so any snapshot can be
re-serialized byte-identically.
"""

from __future__ import annotations

import json
import math
import re
import uuid
from dataclasses import dataclass
from typing import Iterable, Sequence

from .canonical import (
    canonical_json_bytes,
    is_canonical_timestamp,
    object_key_for_hash,
    sha256_hex,
)
from .errors import (
    CorruptFile,
    EncodingError,
    NonFiniteFloat,
    NotFound,
    SchemaMismatch,
)
from .object_store import LocalObjectStore

COLUMN_TYPES = ("int64", "float64", "bool", "string", "timestamp")
ROWS_PER_FILE = 100_000

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

_COLUMN_NAME_RE = re.compile(r"^[a-z_][a-z0-9_]*$")

_DATA_FILE_NAMESPACE = uuid.uuid5(uuid.NAMESPACE_URL, "bauplan/data-file")


@dataclass(frozen=True)
class Column:
    name: str
    type: str
    nullable: bool


@dataclass(frozen=True)
class Schema:
    """Ordered, validated column list."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        if not self.columns:
            raise SchemaMismatch("schema must have at least one column")
        seen = set()
        for col in self.columns:
            if not _COLUMN_NAME_RE.match(col.name):
                raise SchemaMismatch(f"invalid column name {col.name!r}")
            if col.type not in COLUMN_TYPES:
                raise SchemaMismatch(f"unknown column type {col.type!r}")
            if col.name in seen:
                raise SchemaMismatch(f"duplicate column name {col.name!r}")
            seen.add(col.name)

    @classmethod
    def of(cls, *cols: tuple) -> "Schema":
        """Build from (name, type, nullable) triples."""
        return cls(tuple(Column(n, t, bool(nl)) for n, t, nl in cols))

    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_json_dict(self) -> dict:
        return {"columns": [
            {"name": c.name, "nullable": c.nullable, "type": c.type}
            for c in self.columns
        ]}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Schema":
        cols = obj.get("columns")
        if not isinstance(cols, list):
            raise SchemaMismatch("schema JSON missing 'columns' list")
        out = []
        for c in cols:
            if not isinstance(c, dict) or set(c) != {"name", "nullable", "type"}:
                raise SchemaMismatch(f"malformed column entry: {c!r}")
            out.append(Column(c["name"], c["type"], bool(c["nullable"])))
        return cls(tuple(out))


@dataclass(frozen=True)
class DataFile:
    path: str
    row_count: int
    content_hash: str


@dataclass(frozen=True)
class TableSnapshot:
    snapshot_id: str
    schema: Schema
    data_files: tuple[DataFile, ...]
    parent_snapshot: str | None
    table_uuid: str

    @property
    def row_count(self) -> int:
        return sum(f.row_count for f in self.data_files)


@dataclass
class ResultSet:
    """In-memory typed rows; what every pipeline step consumes and produces."""

    schema: Schema
    rows: list[tuple]


# --- row validation -----------------------------------------------------------

def _value_type_ok(col: Column, value) -> str | None:
    """Return a reason string when `value` does not fit `col`, else None."""
    if value is None:
        return None if col.nullable else "null in non-nullable column"
    t = col.type
    if t == "int64":
        if isinstance(value, bool) or not isinstance(value, int):
            return f"expected int64, got {type(value).__name__}"
        if not INT64_MIN <= value <= INT64_MAX:
            return "int64 out of range"
    elif t == "float64":
        if not isinstance(value, float):
            return f"expected float64, got {type(value).__name__}"
    elif t == "bool":
        if not isinstance(value, bool):
            return f"expected bool, got {type(value).__name__}"
    elif t == "string":
        if not isinstance(value, str):
            return f"expected string, got {type(value).__name__}"
    elif t == "timestamp":
        if not isinstance(value, str):
            return f"expected timestamp string, got {type(value).__name__}"
        if not is_canonical_timestamp(value):
            return f"not a canonical timestamp: {value!r}"
    return None


def validate_rows(schema: Schema, rows: Iterable[tuple]) -> None:
    """Check arity, nullability and value types; raise SchemaMismatch."""
    ncols = len(schema.columns)
    for i, row in enumerate(rows):
        if len(row) != ncols:
            raise SchemaMismatch(
                f"expected {ncols} values, got {len(row)}", row_index=i)
        for col, value in zip(schema.columns, row):
            reason = _value_type_ok(col, value)
            if reason:
                raise SchemaMismatch(reason, row_index=i, column=col.name)


# --- canonical CSV ---------------------------------------------------------------

def _quote(text: str) -> str:
    return '"' + text.replace('"', '""') + '"'


def _needs_quote(text: str) -> bool:
    return text == "" or any(c in text for c in ',"\r\n')


def _encode_field(col: Column, value) -> str:
    if value is None:
        return ""
    t = col.type
    if t == "int64":
        if isinstance(value, bool) or not isinstance(value, int):
            raise EncodingError(f"column {col.name}: not an int64: {value!r}")
        if not INT64_MIN <= value <= INT64_MAX:
            raise EncodingError(f"column {col.name}: int64 out of range")
        return str(value)
    if t == "float64":
        if not isinstance(value, float):
            raise EncodingError(f"column {col.name}: not a float64: {value!r}")
        if not math.isfinite(value):
            raise EncodingError(f"column {col.name}: non-finite float")
        return repr(value)
    if t == "bool":
        if not isinstance(value, bool):
            raise EncodingError(f"column {col.name}: not a bool: {value!r}")
        return "true" if value else "false"
    # string / timestamp
    if not isinstance(value, str):
        raise EncodingError(f"column {col.name}: not a string: {value!r}")
    if t == "timestamp" and not is_canonical_timestamp(value):
        raise EncodingError(f"column {col.name}: bad timestamp {value!r}")
    return _quote(value) if _needs_quote(value) else value


def encode_csv(schema: Schema, rows: Iterable[tuple]) -> bytes:
    lines = [",".join(schema.names())]
    ncols = len(schema.columns)
    for row in rows:
        if len(row) != ncols:
            raise EncodingError(f"expected {ncols} values, got {len(row)}")
        lines.append(",".join(
            _encode_field(col, v) for col, v in zip(schema.columns, row)))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _scan_records(text: str) -> list[list[str]]:
    """Split canonical CSV text into raw (still quoted) field strings.

    Strict by design: stray quotes, CR outside quoted fields, and a missing
    final LF are all rejected rather than repaired.
    """
    if text == "":
        raise EncodingError("empty CSV payload")
    records: list[list[str]] = []
    fields: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if text[i] == '"':
            j = i + 1
            while True:
                k = text.find('"', j)
                if k == -1:
                    raise EncodingError("unterminated quoted field")
                if k + 1 < n and text[k + 1] == '"':
                    j = k + 2
                    continue
                break
            fields.append(text[i:k + 1])
            i = k + 1
        else:
            j = i
            while j < n and text[j] not in ",\n":
                if text[j] in '"\r':
                    raise EncodingError("bare quote or CR in unquoted field")
                j += 1
            fields.append(text[i:j])
            i = j
        if i >= n:
            raise EncodingError("missing trailing newline")
        sep = text[i]
        i += 1
        if sep == ",":
            continue
        if sep == "\n":
            records.append(fields)
            fields = []
        else:
            raise EncodingError(f"expected ',' or newline, got {sep!r}")
    return records


def _decode_field(col: Column, raw: str):
    if raw == "":
        if not col.nullable:
            raise EncodingError(
                f"column {col.name}: null in non-nullable column")
        return None
    t = col.type
    if raw.startswith('"'):
        if t not in ("string", "timestamp"):
            raise EncodingError(f"column {col.name}: quoted {t} field")
        value = raw[1:-1].replace('""', '"')
    elif t == "int64":
        try:
            value = int(raw, 10)
        except ValueError:
            raise EncodingError(f"column {col.name}: bad int64 literal {raw!r}")
    elif t == "float64":
        try:
            value = float(raw)
        except ValueError:
            raise EncodingError(
                f"column {col.name}: bad float64 literal {raw!r}")
        if not math.isfinite(value):
            raise EncodingError(f"column {col.name}: non-finite float")
    elif t == "bool":
        if raw == "true":
            value = True
        elif raw == "false":
            value = False
        else:
            raise EncodingError(f"column {col.name}: bad bool literal {raw!r}")
    else:
        value = raw
    # Canonical contract: every field must re-encode to the exact bytes read.
    if _encode_field(col, value) != raw:
        raise EncodingError(
            f"column {col.name}: non-canonical field {raw!r}")
    return value


def decode_csv(schema: Schema, data: bytes) -> list[tuple]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise EncodingError(f"invalid UTF-8: {e}")
    records = _scan_records(text)
    header = records[0]
    if header != schema.names():
        raise EncodingError(
            f"header {header!r} does not match schema {schema.names()!r}")
    ncols = len(schema.columns)
    rows: list[tuple] = []
    for rec in records[1:]:
        if len(rec) != ncols:
            raise EncodingError(f"expected {ncols} fields, got {len(rec)}")
        rows.append(tuple(
            _decode_field(col, raw) for col, raw in zip(schema.columns, rec)))
    return rows


# --- snapshots -----------------------------------------------------------------

def snapshot_canonical_bytes(schema: Schema, data_files: Sequence[DataFile],
                             parent_snapshot: str | None,
                             table_uuid: str) -> bytes:
    return canonical_json_bytes({
        "data_files": [
            {"content_hash": f.content_hash, "path": f.path,
             "row_count": f.row_count}
            for f in data_files
        ],
        "parent_snapshot": parent_snapshot,
        "schema": schema.to_json_dict(),
        "table_uuid": table_uuid,
    })


def snapshot_hash(schema: Schema, data_files: Sequence[DataFile],
                  parent_snapshot: str | None, table_uuid: str) -> str:
    """SHA-256 of the canonical JSON serialization; this is the snapshot id."""
    return sha256_hex(
        snapshot_canonical_bytes(schema, data_files, parent_snapshot,
                                 table_uuid))


def load_snapshot(store: LocalObjectStore, snapshot_id: str) -> TableSnapshot:
    data = store.get_object(object_key_for_hash(snapshot_id))
    if sha256_hex(data) != snapshot_id:
        raise CorruptFile(f"snapshot {snapshot_id} bytes do not match its id")
    try:
        obj = json.loads(data)
        schema = Schema.from_json_dict(obj["schema"])
        files = tuple(
            DataFile(f["path"], int(f["row_count"]), f["content_hash"])
            for f in obj["data_files"])
        parent = obj["parent_snapshot"]
        table_uuid = obj["table_uuid"]
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptFile(f"snapshot {snapshot_id} is malformed: {e}")
    return TableSnapshot(snapshot_id, schema, files, parent, table_uuid)


def _check_schema_evolution(old: Schema, new: Schema) -> None:
    """Allow only appended nullable columns and int64 -> float64 widening."""
    if len(new.columns) < len(old.columns):
        raise SchemaMismatch("schema evolution cannot drop columns")
    for old_col, new_col in zip(old.columns, new.columns):
        if old_col.name != new_col.name:
            raise SchemaMismatch(
                f"schema evolution cannot rename column {old_col.name!r} "
                f"to {new_col.name!r}")
        if old_col.nullable != new_col.nullable:
            raise SchemaMismatch(
                f"schema evolution cannot change nullability of "
                f"{old_col.name!r}")
        if old_col.type != new_col.type and not (
                old_col.type == "int64" and new_col.type == "float64"):
            raise SchemaMismatch(
                f"schema evolution cannot change {old_col.name!r} from "
                f"{old_col.type} to {new_col.type}")
    for extra in new.columns[len(old.columns):]:
        if not extra.nullable:
            raise SchemaMismatch(
                f"schema evolution can only add nullable columns, "
                f"{extra.name!r} is non-nullable")


def write_table(store: LocalObjectStore, table_uuid: str, schema: Schema,
                rows: ResultSet, parent: str | None) -> TableSnapshot:
    """Persist `rows` as a new immutable snapshot of the table.

    Output bytes (data files and metadata) are a pure function of
    (table_uuid, schema, rows, parent), so re-writing identical rows is an
    idempotent no-op that yields the same snapshot id.
    """
    uuid.UUID(table_uuid)  # caller bug if malformed
    if rows.schema != schema:
        raise SchemaMismatch("ResultSet schema differs from declared schema")
    validate_rows(schema, rows.rows)
    for i, row in enumerate(rows.rows):
        for col, value in zip(schema.columns, row):
            if col.type == "float64" and value is not None \
                    and not math.isfinite(value):
                raise NonFiniteFloat(
                    f"non-finite float at row {i} column {col.name!r}")
    if parent is not None:
        parent_snap = load_snapshot(store, parent)
        if parent_snap.table_uuid != table_uuid:
            raise SchemaMismatch(
                f"parent snapshot belongs to table {parent_snap.table_uuid}, "
                f"not {table_uuid}")
        _check_schema_evolution(parent_snap.schema, schema)

    data_files: list[DataFile] = []
    for index in range(0, max(len(rows.rows), 0), ROWS_PER_FILE):
        chunk = rows.rows[index:index + ROWS_PER_FILE]
        payload = encode_csv(schema, chunk)
        content_hash = sha256_hex(payload)
        file_uuid = uuid.uuid5(
            _DATA_FILE_NAMESPACE,
            f"{table_uuid}:{index // ROWS_PER_FILE}:{content_hash}")
        path = f"data/{table_uuid}/{file_uuid}.csv"
        store.put_object(path, payload)
        data_files.append(DataFile(path, len(chunk), content_hash))

    meta = snapshot_canonical_bytes(schema, data_files, parent, table_uuid)
    snapshot_id = sha256_hex(meta)
    store.put_object(object_key_for_hash(snapshot_id), meta)
    return TableSnapshot(snapshot_id, schema, tuple(data_files), parent,
                         table_uuid)


def read_table(store: LocalObjectStore, snapshot: TableSnapshot) -> ResultSet:
    """Load all data files in order, verifying each content hash."""
    rows: list[tuple] = []
    for f in snapshot.data_files:
        try:
            payload = store.get_object(f.path)
        except NotFound:
            raise NotFound(f"data file missing: {f.path}")
        if sha256_hex(payload) != f.content_hash:
            raise CorruptFile(f"content hash mismatch for {f.path}")
        try:
            file_rows = decode_csv(snapshot.schema, payload)
        except EncodingError as e:
            raise CorruptFile(f"cannot decode {f.path}: {e}")
        if len(file_rows) != f.row_count:
            raise CorruptFile(
                f"{f.path}: expected {f.row_count} rows, got {len(file_rows)}")
        rows.extend(file_rows)
    return ResultSet(snapshot.schema, rows)
