"""SQL subset front end: parser, schema inference, executor."""

from .ast import (
    Aggregate,
    BoolOp,
    ColumnRef,
    Comparison,
    JoinClause,
    Literal,
    Not,
    NullTest,
    OrderBy,
    Projection,
    STAR,
    SelectQuery,
)
from .engine import execute_query
from .infer import infer_output_schema
from .parser import extract_table_refs, parse_sql

__all__ = [
    "Aggregate", "BoolOp", "ColumnRef", "Comparison", "JoinClause",
    "Literal", "Not", "NullTest", "OrderBy", "Projection", "STAR",
    "SelectQuery", "execute_query", "infer_output_schema",
    "extract_table_refs", "parse_sql",
]
