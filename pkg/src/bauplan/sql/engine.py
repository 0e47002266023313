"""Query executor over in-memory row sets.

Semantics are SQL three-valued logic: WHERE keeps only rows whose
predicate is TRUE, comparisons with NULL are unknown, NULL join keys never
match. All output ordering is deterministic: base rows keep table order,
joins are left-major, GROUP BY emits groups in first-occurrence order,
ORDER BY is a stable sort with NULL sorting lowest, LIMIT truncates last.
"""

from __future__ import annotations

from typing import Callable, Mapping

from ..errors import IntegerOverflow
from ..table_format import INT64_MAX, INT64_MIN, ResultSet
from .ast import BoolOp, Comparison, Literal, Not, NullTest, SelectQuery
from .infer import Binding, bind_query

_Row = tuple
_PredFn = Callable[[_Row], object]  # returns True / False / None


def _compile_getter(binding: Binding, operand) -> Callable[[_Row], object]:
    if isinstance(operand, Literal):
        value = operand.value
        return lambda row: value
    index = binding.scope.resolve(operand)
    return lambda row: row[index]


def _compile_comparison(binding: Binding, node: Comparison) -> _PredFn:
    left = _compile_getter(binding, node.left)
    right = _compile_getter(binding, node.right)
    op = node.op

    def run(row: _Row):
        a = left(row)
        b = right(row)
        if a is None or b is None:
            return None
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        return a >= b

    return run


def _compile_predicate(binding: Binding, node) -> _PredFn:
    if isinstance(node, Comparison):
        return _compile_comparison(binding, node)
    if isinstance(node, NullTest):
        getter = _compile_getter(binding, node.column)
        if node.negated:
            return lambda row: getter(row) is not None
        return lambda row: getter(row) is None
    if isinstance(node, Not):
        inner = _compile_predicate(binding, node.operand)

        def negate(row: _Row):
            v = inner(row)
            return None if v is None else not v

        return negate
    # BoolOp with Kleene logic.
    assert isinstance(node, BoolOp)
    left = _compile_predicate(binding, node.left)
    right = _compile_predicate(binding, node.right)
    if node.op == "and":
        def conj(row: _Row):
            a = left(row)
            if a is False:
                return False
            b = right(row)
            if b is False:
                return False
            if a is None or b is None:
                return None
            return True
        return conj

    def disj(row: _Row):
        a = left(row)
        if a is True:
            return True
        b = right(row)
        if b is True:
            return True
        if a is None or b is None:
            return None
        return False
    return disj


def _aggregate(fn: str, index: int | None, rows: list[_Row],
               out_type: str):
    if fn == "count":
        if index is None:
            return len(rows)
        return sum(1 for row in rows if row[index] is not None)
    acc = None
    count = 0
    if fn == "sum" or fn == "avg":
        for row in rows:
            v = row[index]
            if v is None:
                continue
            acc = v if acc is None else acc + v
            count += 1
        if acc is None:
            return None
        if fn == "avg":
            return acc / count
        if out_type == "int64" and not INT64_MIN <= acc <= INT64_MAX:
            raise IntegerOverflow("SUM exceeds int64 range")
        return acc
    if fn == "min":
        for row in rows:
            v = row[index]
            if v is not None and (acc is None or v < acc):
                acc = v
        return acc
    for row in rows:
        v = row[index]
        if v is not None and (acc is None or v > acc):
            acc = v
    return acc


def execute_query(query: SelectQuery,
                  resolver: Callable[[str], ResultSet] | Mapping[str, ResultSet]
                  ) -> ResultSet:
    """Run a query; `resolver` maps table names to ResultSets."""
    if not callable(resolver):
        mapping = dict(resolver)
        resolver = mapping.__getitem__
    base = resolver(query.from_table)
    inputs = {query.from_table: base.schema}
    join_rs = None
    if query.join is not None:
        join_rs = resolver(query.join.table)
        inputs[query.join.table] = join_rs.schema
    binding = bind_query(query, inputs)

    rows: list[_Row] = base.rows
    if query.join is not None:
        li, ri = binding.join_left_index, binding.join_right_index
        ri_local = ri - binding.left_width
        # Group right rows by key, preserving order; NULL keys never match.
        buckets: dict[object, list[_Row]] = {}
        for right_row in join_rs.rows:
            key = right_row[ri_local]
            if key is None:
                continue
            buckets.setdefault(key, []).append(right_row)
        joined: list[_Row] = []
        for left_row in rows:
            key = left_row[li]
            if key is None:
                continue
            for right_row in buckets.get(key, ()):
                joined.append(left_row + right_row)
        rows = joined

    if binding.where is not None:
        pred = _compile_predicate(binding, binding.where)
        rows = [row for row in rows if pred(row) is True]

    has_aggregate = any(p.kind == "aggregate" for p in binding.projections)
    if has_aggregate or binding.group_indices:
        if binding.group_indices:
            groups: dict[tuple, list[_Row]] = {}
            for row in rows:
                key = tuple(row[i] for i in binding.group_indices)
                groups.setdefault(key, []).append(row)
            buckets_list = list(groups.items())
        else:
            buckets_list = [((), rows)]
        out_rows = []
        for key, bucket in buckets_list:
            values = []
            for p in binding.projections:
                if p.kind == "aggregate":
                    values.append(
                        _aggregate(p.fn, p.index, bucket, p.type))
                else:
                    values.append(
                        key[binding.group_indices.index(p.index)])
            out_rows.append(tuple(values))
    else:
        indices = [p.index for p in binding.projections]
        out_rows = [tuple(row[i] for i in indices) for row in rows]

    if binding.order_index is not None:
        idx = binding.order_index

        def sort_key(row: _Row):
            v = row[idx]
            return (0,) if v is None else (1, v)

        out_rows = sorted(out_rows, key=sort_key,
                          reverse=binding.order_descending)

    if binding.limit is not None:
        out_rows = out_rows[:binding.limit]

    return ResultSet(binding.output_schema, out_rows)
