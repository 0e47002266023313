"""Tokenizer and recursive-descent parser for the SELECT subset.

Grammar (keywords case-insensitive, identifiers lowercased, `--` line
comments skipped):

    query    := SELECT ("*" | item ("," item)*) FROM ident
                (JOIN ident ON qual "=" qual)?
                (WHERE pred)?
                (GROUP BY col ("," col)*)?
                (ORDER BY col (ASC | DESC)?)?
                (LIMIT int)?
    item     := col (AS ident)? | fn "(" ("*" | col) ")" (AS ident)?
    fn       := COUNT | SUM | AVG | MIN | MAX
    col      := ident | qual
    qual     := ident "." ident
    pred     := or_expr
    or_expr  := and_expr (OR and_expr)*
    and_expr := not_expr (AND not_expr)*
    not_expr := NOT not_expr | "(" pred ")" | col IS (NOT)? NULL
                | col cmp (col | literal)
    cmp      := "=" | "!=" | "<" | "<=" | ">" | ">="

Literals: integers, plain decimals, single-quoted strings ('' escapes a
quote), TRUE/FALSE. NULL appears only in IS / IS NOT NULL; `x = NULL` is a
parse error.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ParseError
from .ast import (
    AGGREGATE_FNS,
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

KEYWORDS = {
    "select", "from", "where", "group", "by", "order", "limit", "join",
    "on", "as", "and", "or", "not", "is", "null", "true", "false",
    "asc", "desc",
}

_SYMBOLS = ("<=", ">=", "!=", "=", "<", ">", "(", ")", ",", ".", "*")


@dataclass(frozen=True)
class Token:
    kind: str   # IDENT | KEYWORD | INT | FLOAT | STRING | SYM | EOF
    value: object
    line: int
    col: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    line, col = 1, 1

    def advance(k: int):
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance(1)
            continue
        if text.startswith("--", i):
            while i < n and text[i] != "\n":
                advance(1)
            continue
        start_line, start_col = line, col
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            lowered = word.lower()
            kind = "KEYWORD" if lowered in KEYWORDS else "IDENT"
            tokens.append(Token(kind, lowered, start_line, start_col))
            advance(j - i)
            continue
        if c.isdigit() or (c == "-" and i + 1 < n and text[i + 1].isdigit()):
            j = i + 1
            while j < n and text[j].isdigit():
                j += 1
            is_float = False
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                is_float = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            lexeme = text[i:j]
            if is_float:
                tokens.append(Token("FLOAT", float(lexeme), start_line,
                                    start_col))
            else:
                tokens.append(Token("INT", int(lexeme), start_line, start_col))
            advance(j - i)
            continue
        if c == "'":
            j = i + 1
            chunks: list[str] = []
            while True:
                if j >= n:
                    raise ParseError("unterminated string literal",
                                     start_line, start_col)
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        chunks.append("'")
                        j += 2
                        continue
                    break
                chunks.append(text[j])
                j += 1
            tokens.append(Token("STRING", "".join(chunks), start_line,
                                start_col))
            advance(j + 1 - i)
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, i):
                tokens.append(Token("SYM", sym, start_line, start_col))
                advance(len(sym))
                break
        else:
            raise ParseError(f"unexpected character {c!r}", line, col)
    tokens.append(Token("EOF", None, line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    # -- token plumbing ----------------------------------------------------

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def _fail(self, expected: tuple[str, ...]):
        t = self.cur
        shown = t.value if t.kind != "EOF" else "end of input"
        raise ParseError(f"unexpected {shown!r}", t.line, t.col,
                         expected=expected)

    def _at_keyword(self, word: str) -> bool:
        return self.cur.kind == "KEYWORD" and self.cur.value == word

    def _at_sym(self, sym: str) -> bool:
        return self.cur.kind == "SYM" and self.cur.value == sym

    def _eat_keyword(self, word: str) -> None:
        if not self._at_keyword(word):
            self._fail((word.upper(),))
        self.pos += 1

    def _eat_sym(self, sym: str) -> None:
        if not self._at_sym(sym):
            self._fail((sym,))
        self.pos += 1

    def _eat_ident(self, what: str = "identifier") -> str:
        if self.cur.kind != "IDENT":
            self._fail((what,))
        value = self.cur.value
        self.pos += 1
        return value

    # -- grammar -------------------------------------------------------------

    def parse_query(self) -> SelectQuery:
        self._eat_keyword("select")
        select_star = False
        projections: list[Projection] = []
        if self._at_sym("*"):
            self.pos += 1
            select_star = True
        else:
            projections.append(self._parse_item())
            while self._at_sym(","):
                self.pos += 1
                projections.append(self._parse_item())
        self._eat_keyword("from")
        from_table = self._eat_ident("table name")
        join = None
        if self._at_keyword("join"):
            self.pos += 1
            join_table = self._eat_ident("table name")
            self._eat_keyword("on")
            left = self._parse_qualified()
            self._eat_sym("=")
            right = self._parse_qualified()
            join = JoinClause(join_table, left, right)
        where = None
        if self._at_keyword("where"):
            self.pos += 1
            where = self._parse_pred()
        group_by: list[ColumnRef] = []
        if self._at_keyword("group"):
            self.pos += 1
            self._eat_keyword("by")
            group_by.append(self._parse_column())
            while self._at_sym(","):
                self.pos += 1
                group_by.append(self._parse_column())
        order_by = None
        if self._at_keyword("order"):
            self.pos += 1
            self._eat_keyword("by")
            col = self._parse_column()
            descending = False
            if self._at_keyword("asc"):
                self.pos += 1
            elif self._at_keyword("desc"):
                self.pos += 1
                descending = True
            order_by = OrderBy(col, descending)
        limit = None
        if self._at_keyword("limit"):
            tok = self.cur
            self.pos += 1
            if self.cur.kind != "INT":
                self._fail(("non-negative integer",))
            limit = self.cur.value
            if limit < 0:
                raise ParseError("LIMIT must be non-negative", tok.line,
                                 tok.col)
            self.pos += 1
        if self.cur.kind != "EOF":
            self._fail(("end of query",))
        aliases = [p.alias for p in projections if p.alias is not None]
        if len(aliases) != len(set(aliases)):
            raise ParseError("duplicate alias", 1, 1)
        return SelectQuery(
            from_table=from_table, select_star=select_star,
            projections=tuple(projections), join=join, where=where,
            group_by=tuple(group_by), order_by=order_by, limit=limit)

    def _parse_item(self) -> Projection:
        if self.cur.kind == "IDENT" and self.cur.value in AGGREGATE_FNS \
                and self.tokens[self.pos + 1].kind == "SYM" \
                and self.tokens[self.pos + 1].value == "(":
            fn = self.cur.value
            self.pos += 2
            if self._at_sym("*"):
                arg: object = STAR
                self.pos += 1
            else:
                arg = self._parse_column()
            self._eat_sym(")")
            expr: object = Aggregate(fn, arg)
        else:
            expr = self._parse_column()
        alias = None
        if self._at_keyword("as"):
            self.pos += 1
            alias = self._eat_ident("alias")
        return Projection(expr, alias)

    def _parse_column(self) -> ColumnRef:
        first = self._eat_ident("column name")
        if self._at_sym("."):
            self.pos += 1
            second = self._eat_ident("column name")
            return ColumnRef(first, second)
        return ColumnRef(None, first)

    def _parse_qualified(self) -> ColumnRef:
        table = self._eat_ident("table name")
        self._eat_sym(".")
        name = self._eat_ident("column name")
        return ColumnRef(table, name)

    # Predicates: OR < AND < NOT < primary.

    def _parse_pred(self):
        node = self._parse_and()
        while self._at_keyword("or"):
            self.pos += 1
            node = BoolOp("or", node, self._parse_and())
        return node

    def _parse_and(self):
        node = self._parse_not()
        while self._at_keyword("and"):
            self.pos += 1
            node = BoolOp("and", node, self._parse_not())
        return node

    def _parse_not(self):
        if self._at_keyword("not"):
            self.pos += 1
            return Not(self._parse_not())
        return self._parse_primary()

    def _parse_primary(self):
        if self._at_sym("("):
            self.pos += 1
            node = self._parse_pred()
            self._eat_sym(")")
            return node
        column = self._parse_column()
        if self._at_keyword("is"):
            self.pos += 1
            negated = False
            if self._at_keyword("not"):
                self.pos += 1
                negated = True
            self._eat_keyword("null")
            return NullTest(column, negated)
        if self.cur.kind == "SYM" and self.cur.value in (
                "=", "!=", "<", "<=", ">", ">="):
            op = self.cur.value
            self.pos += 1
            right = self._parse_operand()
            return Comparison(op, column, right)
        self._fail(("IS", "comparison operator"))

    def _parse_operand(self):
        t = self.cur
        if t.kind == "INT":
            self.pos += 1
            return Literal(t.value, "int64")
        if t.kind == "FLOAT":
            self.pos += 1
            return Literal(t.value, "float64")
        if t.kind == "STRING":
            self.pos += 1
            return Literal(t.value, "string")
        if t.kind == "KEYWORD" and t.value in ("true", "false"):
            self.pos += 1
            return Literal(t.value == "true", "bool")
        if t.kind == "KEYWORD" and t.value == "null":
            raise ParseError("NULL is only valid with IS / IS NOT",
                             t.line, t.col)
        if t.kind == "IDENT":
            return self._parse_column()
        self._fail(("column", "literal"))


def parse_sql(text: str) -> SelectQuery:
    """Parse one SELECT statement; raises ParseError with line/column."""
    return _Parser(text).parse_query()


def extract_table_refs(query: SelectQuery) -> set[str]:
    """Tables a query reads: the FROM table plus the JOIN table if any."""
    refs = {query.from_table}
    if query.join is not None:
        refs.add(query.join.table)
    return refs
