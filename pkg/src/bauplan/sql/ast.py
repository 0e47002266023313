"""AST node types for the SELECT subset."""

from __future__ import annotations

from dataclasses import dataclass


class _StarType:
    def __repr__(self):
        return "STAR"


STAR = _StarType()

AGGREGATE_FNS = ("count", "sum", "avg", "min", "max")
COMPARISON_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class ColumnRef:
    table: str | None
    name: str

    def __str__(self):
        return f"{self.table}.{self.name}" if self.table else self.name


@dataclass(frozen=True)
class Literal:
    value: object
    type: str  # int64 | float64 | bool | string


@dataclass(frozen=True)
class Aggregate:
    fn: str                      # count | sum | avg | min | max
    arg: ColumnRef | _StarType


@dataclass(frozen=True)
class Projection:
    expr: ColumnRef | Aggregate
    alias: str | None = None


@dataclass(frozen=True)
class Comparison:
    op: str
    left: ColumnRef
    right: ColumnRef | Literal


@dataclass(frozen=True)
class NullTest:
    column: ColumnRef
    negated: bool  # True for IS NOT NULL


@dataclass(frozen=True)
class Not:
    operand: object


@dataclass(frozen=True)
class BoolOp:
    op: str  # and | or
    left: object
    right: object


@dataclass(frozen=True)
class JoinClause:
    table: str
    left: ColumnRef   # qualified column on one side of the equi-join
    right: ColumnRef  # qualified column on the other side


@dataclass(frozen=True)
class OrderBy:
    column: ColumnRef
    descending: bool = False


@dataclass(frozen=True)
class SelectQuery:
    from_table: str
    select_star: bool = False
    projections: tuple[Projection, ...] = ()
    join: JoinClause | None = None
    where: object | None = None
    group_by: tuple[ColumnRef, ...] = ()
    order_by: OrderBy | None = None
    limit: int | None = None
