"""Name resolution and output-schema inference.

Binds a parsed query against input schemas, producing index-resolved
projections and a type-checked predicate that the executor can evaluate
without further name lookups. Inference rules: projected columns keep
their source type and nullability; COUNT is non-nullable int64; SUM keeps
the numeric type, AVG is float64, MIN/MAX keep the input type, and all
aggregates except COUNT are nullable because they are NULL over zero rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from ..canonical import is_canonical_timestamp
from ..errors import (
    AmbiguousColumn,
    QueryTypeError,
    UnknownColumn,
    UnknownTable,
)
from ..table_format import Column, Schema
from .ast import (
    Aggregate,
    BoolOp,
    ColumnRef,
    Comparison,
    Literal,
    Not,
    NullTest,
    STAR,
    SelectQuery,
)

_NUMERIC = ("int64", "float64")


@dataclass(frozen=True)
class BoundColumn:
    qualifier: str
    name: str
    type: str
    nullable: bool


@dataclass(frozen=True)
class BoundProjection:
    name: str
    type: str
    nullable: bool
    # 'column' with source index, or aggregate fn with arg index (None = *)
    kind: str
    index: int | None
    fn: str | None = None


@dataclass
class Binding:
    columns: list[BoundColumn]
    from_table: str
    join_table: str | None
    left_width: int
    join_left_index: int | None
    join_right_index: int | None
    projections: list[BoundProjection]
    where: object | None
    group_indices: list[int]
    order_index: int | None
    order_descending: bool
    limit: int | None
    output_schema: Schema
    scope: "_Scope" = None


class _Scope:
    def __init__(self, frames: list[tuple[str, Schema]]):
        self.frames = frames
        self.columns: list[BoundColumn] = []
        for table, schema in frames:
            for col in schema.columns:
                self.columns.append(
                    BoundColumn(table, col.name, col.type, col.nullable))

    def table_names(self) -> list[str]:
        return [t for t, _ in self.frames]

    def resolve(self, ref: ColumnRef) -> int:
        if ref.table is not None:
            if ref.table not in self.table_names():
                raise UnknownTable(
                    f"unknown table {ref.table!r} in column {ref}")
            for i, col in enumerate(self.columns):
                if col.qualifier == ref.table and col.name == ref.name:
                    return i
            raise UnknownColumn(f"no column {ref}")
        hits = [i for i, col in enumerate(self.columns)
                if col.name == ref.name]
        if not hits:
            raise UnknownColumn(f"no column {ref.name!r}")
        if len(hits) > 1:
            raise AmbiguousColumn(
                f"column {ref.name!r} exists on both sides of the join; "
                f"qualify it")
        return hits[0]


def _check_comparison(scope: _Scope, node: Comparison) -> None:
    left = scope.columns[scope.resolve(node.left)]
    if isinstance(node.right, Literal):
        lt, rt = left.type, node.right.type
        if lt == rt:
            return
        if lt in _NUMERIC and rt in _NUMERIC:
            return
        if lt == "timestamp" and rt == "string":
            if not is_canonical_timestamp(node.right.value):
                raise QueryTypeError(
                    f"literal {node.right.value!r} is not a canonical "
                    f"timestamp")
            return
        raise QueryTypeError(f"cannot compare {lt} with {rt} literal")
    right = scope.columns[scope.resolve(node.right)]
    if left.type == right.type:
        return
    if left.type in _NUMERIC and right.type in _NUMERIC:
        return
    raise QueryTypeError(f"cannot compare {left.type} with {right.type}")


def _check_predicate(scope: _Scope, node) -> None:
    if isinstance(node, Comparison):
        _check_comparison(scope, node)
    elif isinstance(node, NullTest):
        scope.resolve(node.column)
    elif isinstance(node, Not):
        _check_predicate(scope, node.operand)
    elif isinstance(node, BoolOp):
        _check_predicate(scope, node.left)
        _check_predicate(scope, node.right)
    else:
        raise QueryTypeError(f"unsupported predicate node {node!r}")


def _aggregate_type(scope: _Scope, agg: Aggregate) -> tuple[str, bool, int | None]:
    """(output type, nullable, resolved arg index)."""
    if agg.fn == "count":
        index = None if agg.arg is STAR else scope.resolve(agg.arg)
        return "int64", False, index
    if agg.arg is STAR:
        raise QueryTypeError(f"{agg.fn.upper()}(*) is not supported")
    index = scope.resolve(agg.arg)
    arg_type = scope.columns[index].type
    if agg.fn == "sum":
        if arg_type not in _NUMERIC:
            raise QueryTypeError(f"SUM over {arg_type}")
        return arg_type, True, index
    if agg.fn == "avg":
        if arg_type not in _NUMERIC:
            raise QueryTypeError(f"AVG over {arg_type}")
        return "float64", True, index
    return arg_type, True, index  # min / max keep the input type


def bind_query(query: SelectQuery,
               input_schemas: Mapping[str, Schema]) -> Binding:
    if query.from_table not in input_schemas:
        raise UnknownTable(f"unknown table {query.from_table!r}")
    frames = [(query.from_table, input_schemas[query.from_table])]
    join_left = join_right = None
    if query.join is not None:
        jt = query.join.table
        if jt == query.from_table:
            raise QueryTypeError("self-join is not supported")
        if jt not in input_schemas:
            raise UnknownTable(f"unknown table {jt!r}")
        frames.append((jt, input_schemas[jt]))
    scope = _Scope(frames)
    left_width = len(input_schemas[query.from_table].columns)

    if query.join is not None:
        li = scope.resolve(query.join.left)
        ri = scope.resolve(query.join.right)
        sides = {scope.columns[li].qualifier, scope.columns[ri].qualifier}
        if sides != {query.from_table, query.join.table}:
            raise QueryTypeError(
                "join condition must reference both joined tables")
        if scope.columns[li].qualifier != query.from_table:
            li, ri = ri, li
        lt, rt = scope.columns[li].type, scope.columns[ri].type
        if lt != rt and not (lt in _NUMERIC and rt in _NUMERIC):
            raise QueryTypeError(f"cannot join {lt} with {rt}")
        join_left, join_right = li, ri

    if query.where is not None:
        _check_predicate(scope, query.where)

    group_indices = [scope.resolve(g) for g in query.group_by]

    projections: list[BoundProjection] = []
    if query.select_star:
        for i, col in enumerate(scope.columns):
            projections.append(BoundProjection(
                col.name, col.type, col.nullable, "column", i))
        names = [p.name for p in projections]
        if len(set(names)) != len(names):
            raise AmbiguousColumn(
                "SELECT * over a join with duplicate column names")
    else:
        for pos, proj in enumerate(query.projections):
            if isinstance(proj.expr, Aggregate):
                out_type, nullable, index = _aggregate_type(scope, proj.expr)
                projections.append(BoundProjection(
                    proj.alias or f"agg_{pos}", out_type, nullable,
                    "aggregate", index, proj.expr.fn))
            else:
                index = scope.resolve(proj.expr)
                col = scope.columns[index]
                projections.append(BoundProjection(
                    proj.alias or col.name, col.type, col.nullable,
                    "column", index))

    has_aggregate = any(p.kind == "aggregate" for p in projections)
    if has_aggregate or group_indices:
        for p in projections:
            if p.kind == "column" and p.index not in group_indices:
                raise QueryTypeError(
                    f"column {p.name!r} must appear in GROUP BY")

    names = [p.name for p in projections]
    if len(set(names)) != len(names):
        raise QueryTypeError("duplicate output column name")
    output_schema = Schema(tuple(
        Column(p.name, p.type, p.nullable) for p in projections))

    order_index = None
    order_descending = False
    if query.order_by is not None:
        ref = query.order_by.column
        if ref.table is not None:
            raise UnknownColumn(
                f"ORDER BY must name an output column, got {ref}")
        if ref.name not in names:
            raise UnknownColumn(f"no output column {ref.name!r}")
        order_index = names.index(ref.name)
        order_descending = query.order_by.descending

    return Binding(
        columns=scope.columns,
        from_table=query.from_table,
        join_table=query.join.table if query.join else None,
        left_width=left_width,
        join_left_index=join_left,
        join_right_index=join_right,
        projections=projections,
        where=query.where,
        group_indices=group_indices,
        order_index=order_index,
        order_descending=order_descending,
        limit=query.limit,
        output_schema=output_schema,
        scope=scope,
    )


def infer_output_schema(query: SelectQuery,
                        input_schemas: Mapping[str, Schema]) -> Schema:
    """Schema a query will produce, without touching any rows."""
    return bind_query(query, input_schemas).output_schema
