"""SQL subset frontend: tokenize, parse, resolve, prepare, bind.

Grammar (single-block, conjunctive WHERE, comma joins):

    SELECT item[, ...] FROM table [alias][, ...]
      [WHERE cond AND ...]
      [GROUP BY col[, ...] [HAVING cond AND ...]]
      [ORDER BY col [ASC|DESC]] [LIMIT n]
    INSERT INTO table VALUES (value[, ...])
    UPDATE table SET col = value[, ...] [WHERE cond AND ...]
    DELETE FROM table [WHERE cond AND ...]
    CREATE TABLE name (col TYPE [PRIMARY KEY][, ...][, PRIMARY KEY (col)])

Items are columns, COUNT(*)/COUNT/SUM/MIN/MAX/AVG aggregates, or a
single '*'.  Conditions compare a column to a literal, a parameter
slot ('?'), or another column (an equi-join when the sides live in
different tables).  Keywords and identifiers are case-insensitive,
normalized upper.  Parse is pure syntax; resolve() checks every
reference against a catalog of table schemas, qualifies bare columns,
and infers parameter slot types.  prepare()/bind() then produce
immutable statement templates and per-call instances.
"""

from __future__ import annotations

import itertools
import re
import threading
from dataclasses import dataclass, replace

from cycledb.errors import CatalogError, ParseError, TypeMismatchError
from cycledb.predicates import COMPARATORS, Param
from cycledb.values import TYPE_NAMES, ValueType, coerce_literal, format_value, parse_date
from cycledb.values import Schema

AGG_FUNCS = ("COUNT", "SUM", "MIN", "MAX", "AVG")

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "ASC",
    "DESC", "LIMIT", "AND", "INSERT", "INTO", "VALUES", "UPDATE", "SET",
    "DELETE", "CREATE", "TABLE", "PRIMARY", "KEY", "NULL", "LIKE",
}

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+|--[^\n]*)
    | (?P<date>\d{4}[.-]\d{2}[.-]\d{2})
    | (?P<float>\d+\.\d+)
    | (?P<int>\d+)
    | (?P<str>'(?:[^']|'')*')
    | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<op><=|>=|!=|<>|=|<|>)
    | (?P<punct>[(),.*?;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    value: object
    pos: int


def tokenize(text):
    tokens = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        raw = m.group()
        if kind != "ws":
            if kind == "int":
                value = int(raw)
            elif kind == "float":
                value = float(raw)
            elif kind == "date":
                value = parse_date(raw)
            elif kind == "str":
                value = raw[1:-1].replace("''", "'")
            elif kind == "op":
                value = "!=" if raw == "<>" else raw
            else:
                value = raw
            tokens.append(Token(kind, value, i))
        i = m.end()
    tokens.append(Token("end", None, len(text)))
    return tokens


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnRef:
    qualifier: object  # alias str, or None when bare
    name: str

    def render(self):
        return f"{self.qualifier}.{self.name}" if self.qualifier else self.name


@dataclass(frozen=True)
class AggTerm:
    func: str
    arg: object  # ColumnRef or None for COUNT(*)

    def render(self):
        inner = "*" if self.arg is None else self.arg.render()
        return f"{self.func}({inner})"


@dataclass(frozen=True)
class Condition:
    """left OP operand; operand is a literal, Param, or ColumnRef."""

    left: ColumnRef
    op: str
    operand: object

    def render(self):
        return f"{self.left.render()} {self.op} {render_operand(self.operand)}"


@dataclass(frozen=True)
class HavingCondition:
    """term OP literal/Param where term is a ColumnRef or AggTerm."""

    term: object
    op: str
    operand: object

    def render(self):
        return f"{self.term.render()} {self.op} {render_operand(self.operand)}"


@dataclass(frozen=True)
class TableRef:
    table: str
    alias: str

    def render(self):
        return self.table if self.alias == self.table else f"{self.table} {self.alias}"


@dataclass(frozen=True)
class OrderSpec:
    column: ColumnRef
    desc: bool = False

    def render(self):
        return self.column.render() + (" DESC" if self.desc else "")


@dataclass(frozen=True)
class SelectStatement:
    kind = "SELECT"
    items: tuple  # ColumnRef | AggTerm, or the 1-tuple ("*",)
    tables: tuple  # TableRef in FROM order
    conditions: tuple  # Condition (joins and filters mixed until resolve)
    group_by: tuple = ()
    having: tuple = ()
    order_by: object = None  # OrderSpec or None
    limit: object = None


@dataclass(frozen=True)
class InsertStatement:
    kind = "INSERT"
    table: str
    values: tuple  # literal | Param per column


@dataclass(frozen=True)
class UpdateStatement:
    kind = "UPDATE"
    table: str
    assignments: tuple  # (column name, literal | Param)
    conditions: tuple = ()


@dataclass(frozen=True)
class DeleteStatement:
    kind = "DELETE"
    table: str
    conditions: tuple = ()


def render_operand(v):
    if isinstance(v, Param):
        return "?"
    if isinstance(v, ColumnRef):
        return v.render()
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if v is None:
        return "NULL"
    return format_value(v)


# -- parser --------------------------------------------------------------------


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.params = itertools.count()

    # --- token plumbing

    def peek(self, offset=0):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self):
        t = self.tokens[self.i]
        if t.kind != "end":
            self.i += 1
        return t

    def error(self, message, token=None):
        token = token or self.peek()
        raise ParseError(message, token.pos)

    def at_keyword(self, *words):
        t = self.peek()
        return t.kind == "name" and t.value.upper() in words

    def expect_keyword(self, word):
        t = self.next()
        if t.kind != "name" or t.value.upper() != word:
            self.error(f"expected {word}", t)

    def expect_punct(self, ch):
        t = self.next()
        if t.kind != "punct" or t.value != ch:
            self.error(f"expected {ch!r}", t)

    def accept_punct(self, ch):
        if self.peek().kind == "punct" and self.peek().value == ch:
            self.next()
            return True
        return False

    def name(self, what="identifier"):
        t = self.next()
        if t.kind != "name":
            self.error(f"expected {what}", t)
        word = t.value.upper()
        if word in KEYWORDS:
            self.error(f"expected {what}, got keyword {word}", t)
        return word

    # --- grammar

    def statement(self):
        t = self.peek()
        if t.kind != "name":
            self.error("expected a statement keyword", t)
        word = t.value.upper()
        if word == "SELECT":
            stmt = self.select()
        elif word == "INSERT":
            stmt = self.insert()
        elif word == "UPDATE":
            stmt = self.update()
        elif word == "DELETE":
            stmt = self.delete()
        else:
            self.error(f"unsupported statement {word}", t)
        self.accept_punct(";")
        if self.peek().kind != "end":
            self.error("trailing input after statement")
        return stmt

    def select(self):
        self.expect_keyword("SELECT")
        items = self.select_items()
        if not self.at_keyword("FROM"):
            self.error("expected FROM")
        self.next()
        tables = [self.table_ref()]
        while self.accept_punct(","):
            tables.append(self.table_ref())
        conditions = self.where_clause()
        group_by, having = (), ()
        if self.at_keyword("GROUP"):
            self.next()
            self.expect_keyword("BY")
            group_by = [self.column_ref()]
            while self.accept_punct(","):
                group_by.append(self.column_ref())
            group_by = tuple(group_by)
            if self.at_keyword("HAVING"):
                self.next()
                having = [self.having_condition()]
                while self.at_keyword("AND"):
                    self.next()
                    having.append(self.having_condition())
                having = tuple(having)
        order_by = None
        if self.at_keyword("ORDER"):
            self.next()
            self.expect_keyword("BY")
            col = self.column_ref()
            desc = False
            if self.at_keyword("ASC", "DESC"):
                desc = self.next().value.upper() == "DESC"
            order_by = OrderSpec(col, desc)
        limit = None
        if self.at_keyword("LIMIT"):
            tok = self.next()
            n = self.next()
            if n.kind != "int":
                self.error("LIMIT expects an integer", n)
            if order_by is None:
                self.error("LIMIT requires ORDER BY", tok)
            if n.value < 1:
                self.error("LIMIT must be at least 1", n)
            limit = n.value
        return SelectStatement(
            items=items,
            tables=tuple(tables),
            conditions=conditions,
            group_by=group_by,
            having=having,
            order_by=order_by,
            limit=limit,
        )

    def select_items(self):
        if self.peek().kind == "punct" and self.peek().value == "*":
            self.next()
            return ("*",)
        items = [self.select_item()]
        while self.accept_punct(","):
            items.append(self.select_item())
        return tuple(items)

    def select_item(self):
        t = self.peek()
        if (
            t.kind == "name"
            and t.value.upper() in AGG_FUNCS
            and self.peek(1).kind == "punct"
            and self.peek(1).value == "("
        ):
            func = self.next().value.upper()
            self.expect_punct("(")
            if self.peek().kind == "punct" and self.peek().value == "*":
                if func != "COUNT":
                    self.error(f"{func}(*) not supported, only COUNT(*)")
                self.next()
                arg = None
            else:
                arg = self.column_ref()
            self.expect_punct(")")
            return AggTerm(func, arg)
        return self.column_ref()

    def column_ref(self):
        first = self.name("column")
        if self.peek().kind == "punct" and self.peek().value == ".":
            self.next()
            return ColumnRef(first, self.name("column"))
        return ColumnRef(None, first)

    def table_ref(self):
        table = self.name("table")
        t = self.peek()
        if t.kind == "name" and t.value.upper() not in KEYWORDS:
            return TableRef(table, self.name("alias"))
        return TableRef(table, table)

    def where_clause(self):
        if not self.at_keyword("WHERE"):
            return ()
        self.next()
        conds = [self.condition()]
        while self.at_keyword("AND"):
            self.next()
            conds.append(self.condition())
        return tuple(conds)

    def comparator(self):
        t = self.next()
        if t.kind == "op":
            return t.value
        if t.kind == "name" and t.value.upper() == "LIKE":
            return "LIKE"
        self.error("expected a comparator", t)

    def condition(self):
        left = self.column_ref()
        op = self.comparator()
        operand = self.operand(allow_column=True)
        if op not in COMPARATORS:
            self.error(f"unsupported comparator {op}")
        return Condition(left, op, operand)

    def having_condition(self):
        t = self.peek()
        if (
            t.kind == "name"
            and t.value.upper() in AGG_FUNCS
            and self.peek(1).kind == "punct"
            and self.peek(1).value == "("
        ):
            func = self.next().value.upper()
            self.expect_punct("(")
            if self.peek().kind == "punct" and self.peek().value == "*":
                if func != "COUNT":
                    self.error(f"{func}(*) not supported, only COUNT(*)")
                self.next()
                arg = None
            else:
                arg = self.column_ref()
            self.expect_punct(")")
            term = AggTerm(func, arg)
        else:
            term = self.column_ref()
        op = self.comparator()
        operand = self.operand(allow_column=False)
        return HavingCondition(term, op, operand)

    def operand(self, allow_column):
        t = self.peek()
        if t.kind in ("int", "float", "str", "date"):
            return self.next().value
        if t.kind == "punct" and t.value == "?":
            self.next()
            return Param(next(self.params))
        if t.kind == "name" and t.value.upper() == "NULL":
            self.next()
            return None
        if t.kind == "name" and allow_column:
            return self.column_ref()
        self.error("expected a literal, parameter, or column", t)

    def insert(self):
        self.expect_keyword("INSERT")
        self.expect_keyword("INTO")
        table = self.name("table")
        self.expect_keyword("VALUES")
        self.expect_punct("(")
        values = [self.operand(allow_column=False)]
        while self.accept_punct(","):
            values.append(self.operand(allow_column=False))
        self.expect_punct(")")
        return InsertStatement(table=table, values=tuple(values))

    def update(self):
        self.expect_keyword("UPDATE")
        table = self.name("table")
        self.expect_keyword("SET")
        assignments = [self.assignment()]
        while self.accept_punct(","):
            assignments.append(self.assignment())
        return UpdateStatement(
            table=table,
            assignments=tuple(assignments),
            conditions=self.where_clause(),
        )

    def assignment(self):
        col = self.name("column")
        t = self.next()
        if t.kind != "op" or t.value != "=":
            self.error("expected = in assignment", t)
        return (col, self.operand(allow_column=False))

    def delete(self):
        self.expect_keyword("DELETE")
        self.expect_keyword("FROM")
        table = self.name("table")
        return DeleteStatement(table=table, conditions=self.where_clause())


def parse(text):
    """Parse one statement; syntax only, no catalog checks."""
    if not text or not text.strip():
        raise ParseError("empty statement", 0)
    return _Parser(text).statement()


def unparse(stmt):
    """Canonical text form; parse(unparse(parse(t))) == parse(t)."""
    if isinstance(stmt, SelectStatement):
        items = "*" if stmt.items == ("*",) else ", ".join(i.render() for i in stmt.items)
        out = [f"SELECT {items} FROM " + ", ".join(t.render() for t in stmt.tables)]
        if stmt.conditions:
            out.append("WHERE " + " AND ".join(c.render() for c in stmt.conditions))
        if stmt.group_by:
            out.append("GROUP BY " + ", ".join(c.render() for c in stmt.group_by))
            if stmt.having:
                out.append("HAVING " + " AND ".join(c.render() for c in stmt.having))
        if stmt.order_by is not None:
            out.append("ORDER BY " + stmt.order_by.render())
        if stmt.limit is not None:
            out.append(f"LIMIT {stmt.limit}")
        return " ".join(out)
    if isinstance(stmt, InsertStatement):
        vals = ", ".join(render_operand(v) for v in stmt.values)
        return f"INSERT INTO {stmt.table} VALUES ({vals})"
    if isinstance(stmt, UpdateStatement):
        sets = ", ".join(f"{c} = {render_operand(v)}" for c, v in stmt.assignments)
        out = [f"UPDATE {stmt.table} SET {sets}"]
        if stmt.conditions:
            out.append("WHERE " + " AND ".join(c.render() for c in stmt.conditions))
        return " ".join(out)
    if isinstance(stmt, DeleteStatement):
        out = [f"DELETE FROM {stmt.table}"]
        if stmt.conditions:
            out.append("WHERE " + " AND ".join(c.render() for c in stmt.conditions))
        return " ".join(out)
    raise TypeError(f"cannot unparse {stmt!r}")


# -- catalog --------------------------------------------------------------------


def parse_catalog(text):
    """CREATE TABLE statements -> {table name: Schema}."""
    p = _Parser(text)
    catalog = {}
    while p.peek().kind != "end":
        p.expect_keyword("CREATE")
        p.expect_keyword("TABLE")
        name = p.name("table")
        if name in catalog:
            p.error(f"duplicate table {name}")
        p.expect_punct("(")
        columns = []
        primary_key = None
        while True:
            if p.at_keyword("PRIMARY"):
                p.next()
                p.expect_keyword("KEY")
                p.expect_punct("(")
                if primary_key is not None:
                    p.error("multiple primary keys")
                primary_key = p.name("column")
                p.expect_punct(")")
            else:
                col = p.name("column")
                tok = p.next()
                if tok.kind != "name" or tok.value.upper() not in TYPE_NAMES:
                    p.error("unknown column type", tok)
                vtype = TYPE_NAMES[tok.value.upper()]
                if p.at_keyword("PRIMARY"):
                    p.next()
                    p.expect_keyword("KEY")
                    if primary_key is not None:
                        p.error("multiple primary keys")
                    primary_key = col
                columns.append((col, vtype))
            if not p.accept_punct(","):
                break
        p.expect_punct(")")
        p.accept_punct(";")
        try:
            catalog[name] = Schema(name, columns, primary_key)
        except CatalogError as exc:
            raise ParseError(str(exc), p.peek().pos) from None
    if not catalog:
        raise ParseError("no CREATE TABLE statements found", 0)
    return catalog


def load_catalog(path):
    with open(path, encoding="utf-8") as fh:
        return parse_catalog(fh.read())


# -- resolution --------------------------------------------------------------------


@dataclass(frozen=True)
class ResolvedStatement:
    """A parsed statement with every reference qualified and checked.

    For SELECTs, conditions are split into equi-join pairs and
    single-table filters; bare column refs carry their owning alias.
    param_types[i] is the inferred type of slot i.
    """

    statement: object
    schemas: dict  # alias -> Schema (FROM order for selects)
    join_conds: tuple  # ((alias, attr), (alias, attr)) adjacent in FROM order
    filters: tuple  # Condition with qualified left, literal/Param operand
    param_types: tuple
    output_names: tuple  # SELECT only: label per output column
    output_items: tuple  # SELECT only: fully-qualified items

    @property
    def kind(self):
        return self.statement.kind


class _Resolver:
    def __init__(self, catalog):
        self.catalog = catalog
        self.param_types = {}

    def schema_of(self, table):
        try:
            return self.catalog[table]
        except KeyError:
            raise CatalogError(f"unknown table {table}") from None

    def note_param(self, operand, vtype):
        old = self.param_types.setdefault(operand.slot, vtype)
        if old is not vtype:
            raise TypeMismatchError(
                f"parameter {operand.slot} used as both {old.value} and {vtype.value}"
            )

    def final_param_types(self):
        if not self.param_types:
            return ()
        slots = sorted(self.param_types)
        if slots != list(range(len(slots))):
            raise CatalogError(f"parameter slots not dense: {slots}")
        return tuple(self.param_types[s] for s in slots)

    # --- SELECT

    def resolve_select(self, stmt):
        aliases = {}
        for tr in stmt.tables:
            if tr.alias in aliases:
                raise CatalogError(f"duplicate table alias {tr.alias}")
            aliases[tr.alias] = self.schema_of(tr.table)
        tables_seen = [tr.table for tr in stmt.tables]
        if len(set(tables_seen)) != len(tables_seen):
            raise CatalogError("self-joins are not supported")

        def qualify(ref):
            if ref.qualifier is not None:
                if ref.qualifier not in aliases:
                    raise CatalogError(f"unknown table alias {ref.qualifier}")
                schema = aliases[ref.qualifier]
                if not schema.has(ref.name):
                    raise CatalogError(
                        f"table {schema.name} has no column {ref.name}"
                    )
                return ref
            owners = [a for a, s in aliases.items() if s.has(ref.name)]
            if not owners:
                raise CatalogError(f"unknown column {ref.name}")
            if len(owners) > 1:
                raise CatalogError(
                    f"ambiguous column {ref.name} (in {', '.join(sorted(owners))})"
                )
            return ColumnRef(owners[0], ref.name)

        def type_of(ref):
            return aliases[ref.qualifier].type_of(ref.name)

        join_conds = []
        filters = []
        for cond in stmt.conditions:
            left = qualify(cond.left)
            operand = cond.operand
            if isinstance(operand, ColumnRef):
                right = qualify(operand)
                if left.qualifier == right.qualifier:
                    raise CatalogError(
                        f"column-to-column within one table not supported: {cond.render()}"
                    )
                if cond.op != "=":
                    raise CatalogError(f"joins must be equi-joins: {cond.render()}")
                if type_of(left) is not type_of(right):
                    raise TypeMismatchError(
                        f"join columns differ in type: {cond.render()}"
                    )
                join_conds.append(
                    ((left.qualifier, left.name), (right.qualifier, right.name))
                )
            elif isinstance(operand, Param):
                self.note_param(operand, type_of(left))
                filters.append(Condition(left, cond.op, operand))
            else:
                value = coerce_literal(operand, type_of(left)) if operand is not None else None
                filters.append(Condition(left, cond.op, value))

        group_by = tuple(qualify(c) for c in stmt.group_by)
        agg_items = []

        def check_agg(term):
            arg = qualify(term.arg) if term.arg is not None else None
            if term.func in ("SUM", "AVG") and arg is not None:
                if type_of(arg) not in (ValueType.INT, ValueType.FLOAT):
                    raise TypeMismatchError(
                        f"{term.func} needs a numeric column, got {arg.render()}"
                    )
            if term.func != "COUNT" and arg is None:
                raise CatalogError(f"{term.func} requires a column argument")
            return AggTerm(term.func, arg)

        if stmt.items == ("*",):
            if stmt.group_by:
                raise CatalogError("SELECT * cannot be combined with GROUP BY")
            output_items = tuple(
                ColumnRef(tr.alias, attr)
                for tr in stmt.tables
                for attr in aliases[tr.alias].attrs
            )
        else:
            resolved_items = []
            for item in stmt.items:
                if isinstance(item, AggTerm):
                    a = check_agg(item)
                    resolved_items.append(a)
                    agg_items.append(a)
                else:
                    resolved_items.append(qualify(item))
            output_items = tuple(resolved_items)

        if stmt.group_by:
            keys = set(group_by)
            for item in output_items:
                if isinstance(item, ColumnRef) and item not in keys:
                    raise CatalogError(
                        f"{item.render()} must appear in GROUP BY or an aggregate"
                    )
        elif agg_items and any(isinstance(i, ColumnRef) for i in output_items):
            raise CatalogError("mixing plain columns with aggregates needs GROUP BY")

        having = []
        for h in stmt.having:
            if isinstance(h.term, AggTerm):
                term = check_agg(h.term)
                ttype = (
                    ValueType.INT
                    if term.func == "COUNT"
                    else ValueType.FLOAT
                    if term.func == "AVG"
                    else type_of(term.arg)
                )
            else:
                term = qualify(h.term)
                if term not in set(group_by):
                    raise CatalogError(
                        f"HAVING column {term.render()} must be a GROUP BY key"
                    )
                ttype = type_of(term)
            operand = h.operand
            if isinstance(operand, Param):
                self.note_param(operand, ttype)
            elif operand is not None:
                operand = coerce_literal(operand, ttype)
            having.append(HavingCondition(term, h.op, operand))

        order_by = stmt.order_by
        if order_by is not None:
            col = qualify(order_by.column)
            if stmt.group_by and col not in set(group_by):
                raise CatalogError(
                    "ORDER BY after GROUP BY must use a grouping key"
                )
            order_by = OrderSpec(col, order_by.desc)

        resolved = replace(
            stmt,
            items=output_items if stmt.items != ("*",) else stmt.items,
            conditions=tuple(filters),
            group_by=group_by,
            having=tuple(having),
            order_by=order_by,
        )
        single = len(stmt.tables) == 1
        names = []
        for item in output_items:
            if isinstance(item, AggTerm):
                arg = "*" if item.arg is None else item.arg.name
                names.append(f"{item.func}({arg})")
            else:
                names.append(item.name if single else item.render())
        return ResolvedStatement(
            statement=resolved,
            schemas={tr.alias: aliases[tr.alias] for tr in stmt.tables},
            join_conds=tuple(join_conds),
            filters=tuple(filters),
            param_types=self.final_param_types(),
            output_names=tuple(names),
            output_items=output_items,
        )

    # --- writes

    def resolve_write(self, stmt):
        schema = self.schema_of(stmt.table)
        alias = stmt.table

        def filter_conditions(conds):
            out = []
            for cond in conds:
                if isinstance(cond.operand, ColumnRef):
                    raise CatalogError(
                        f"write predicates must compare to constants: {cond.render()}"
                    )
                if cond.left.qualifier not in (None, alias):
                    raise CatalogError(f"unknown table alias {cond.left.qualifier}")
                if not schema.has(cond.left.name):
                    raise CatalogError(
                        f"table {schema.name} has no column {cond.left.name}"
                    )
                ctype = schema.type_of(cond.left.name)
                operand = cond.operand
                if isinstance(operand, Param):
                    self.note_param(operand, ctype)
                elif operand is not None:
                    operand = coerce_literal(operand, ctype)
                out.append(Condition(ColumnRef(alias, cond.left.name), cond.op, operand))
            return tuple(out)

        if isinstance(stmt, InsertStatement):
            if len(stmt.values) != schema.arity():
                raise CatalogError(
                    f"INSERT into {schema.name} needs {schema.arity()} values,"
                    f" got {len(stmt.values)}"
                )
            values = []
            for v, vtype, attr in zip(stmt.values, schema.types, schema.attrs):
                if isinstance(v, Param):
                    self.note_param(v, vtype)
                    values.append(v)
                elif v is None:
                    values.append(None)
                else:
                    values.append(coerce_literal(v, vtype))
            resolved = replace(stmt, values=tuple(values))
            filters = ()
        elif isinstance(stmt, UpdateStatement):
            assignments = []
            for col, v in stmt.assignments:
                if not schema.has(col):
                    raise CatalogError(f"table {schema.name} has no column {col}")
                vtype = schema.type_of(col)
                if isinstance(v, Param):
                    self.note_param(v, vtype)
                elif v is not None:
                    v = coerce_literal(v, vtype)
                assignments.append((col, v))
            filters = filter_conditions(stmt.conditions)
            resolved = replace(stmt, assignments=tuple(assignments), conditions=filters)
        else:
            filters = filter_conditions(stmt.conditions)
            resolved = replace(stmt, conditions=filters)

        return ResolvedStatement(
            statement=resolved,
            schemas={alias: schema},
            join_conds=(),
            filters=filters,
            param_types=self.final_param_types(),
            output_names=(),
            output_items=(),
        )


def resolve(stmt, catalog):
    """Check a parsed statement against the catalog; returns ResolvedStatement."""
    r = _Resolver(catalog)
    if isinstance(stmt, SelectStatement):
        return r.resolve_select(stmt)
    if isinstance(stmt, (InsertStatement, UpdateStatement, DeleteStatement)):
        return r.resolve_write(stmt)
    raise TypeError(f"cannot resolve {stmt!r}")


def parse_resolved(text, catalog):
    return resolve(parse(text), catalog)


# -- prepared statements -----------------------------------------------------------


_stmt_ids = itertools.count(1)
_stmt_lock = threading.Lock()


@dataclass(frozen=True)
class PreparedStatement:
    resolved: ResolvedStatement
    param_types: tuple
    statement_id: int
    text: str

    @property
    def kind(self):
        return self.resolved.kind

    def is_read(self):
        return self.kind == "SELECT"


def prepare(resolved, text=None):
    """Freeze a resolved statement into a reusable, thread-safe template."""
    if not isinstance(resolved, ResolvedStatement):
        raise TypeError("prepare() takes a resolved statement")
    with _stmt_lock:
        sid = next(_stmt_ids)
    return PreparedStatement(
        resolved=resolved,
        param_types=resolved.param_types,
        statement_id=sid,
        text=text if text is not None else unparse(resolved.statement),
    )


def prepare_sql(text, catalog):
    return prepare(parse_resolved(text, catalog), text=text)


@dataclass(frozen=True)
class QueryInstance:
    """One admitted execution of a prepared statement.

    qid doubles as the arrival timestamp and the snapshot: the engine
    hands out one monotone counter for queries and writes alike.
    """

    prepared: PreparedStatement
    params: tuple
    qid: int
    arrival: int

    @property
    def snapshot(self):
        return self.arrival

    @property
    def kind(self):
        return self.prepared.kind


def bind(prepared, params, qid, arrival):
    """Bind parameters; validates arity and coerces each value."""
    expected = prepared.param_types
    params = tuple(params)
    if len(params) != len(expected):
        raise TypeMismatchError(
            f"statement {prepared.statement_id} takes {len(expected)} parameters,"
            f" got {len(params)}"
        )
    coerced = []
    for slot, (v, vtype) in enumerate(zip(params, expected)):
        if v is None:
            coerced.append(None)
            continue
        try:
            coerced.append(coerce_literal(v, vtype))
        except TypeMismatchError as exc:
            raise TypeMismatchError(f"parameter {slot}: {exc}") from None
    return QueryInstance(prepared=prepared, params=tuple(coerced), qid=qid, arrival=arrival)
