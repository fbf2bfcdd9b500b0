"""Value domain and table schemas.

Supported scalar types: 64-bit ints, 64-bit floats, UTF-8 strings and
calendar dates (held as datetime.date; a date is conceptually a day
count since the epoch and is never interchangeable with an int).
Null is represented by None and is admitted in any column.

Comparisons between unlike non-null types are a type error, never a
silent coercion.  The only coercions performed anywhere are lossless
literal adjustments at statement-resolution time (an int literal
compared against a float column, an ISO date string against a date
column).
"""

from __future__ import annotations

import datetime as _dt
from enum import Enum

from cycledb.errors import CatalogError, TypeMismatchError


class ValueType(Enum):
    INT = "int"
    FLOAT = "float"
    STR = "str"
    DATE = "date"

    def __repr__(self):
        return f"ValueType.{self.name}"


_PY_TYPES = {
    ValueType.INT: int,
    ValueType.FLOAT: float,
    ValueType.STR: str,
    ValueType.DATE: _dt.date,
}

#: Catalog DDL spellings accepted for each type.
TYPE_NAMES = {
    "INT": ValueType.INT,
    "INTEGER": ValueType.INT,
    "BIGINT": ValueType.INT,
    "FLOAT": ValueType.FLOAT,
    "DOUBLE": ValueType.FLOAT,
    "REAL": ValueType.FLOAT,
    "TEXT": ValueType.STR,
    "STRING": ValueType.STR,
    "VARCHAR": ValueType.STR,
    "DATE": ValueType.DATE,
}


def parse_date(text):
    """Parse a date literal; both YYYY-MM-DD and YYYY.MM.DD spellings."""
    t = text.strip().replace(".", "-")
    try:
        return _dt.date.fromisoformat(t)
    except ValueError as exc:
        raise TypeMismatchError(f"bad date literal {text!r}: {exc}") from None


def value_matches(vtype, value):
    """True when value is null or an instance of vtype's Python type."""
    if value is None:
        return True
    py = _PY_TYPES[vtype]
    if py is int:
        # bool is an int subclass but is not a valid engine value
        return type(value) is int
    if py is float:
        return type(value) is float
    if py is _dt.date:
        # datetime instances would compare unlike pure dates
        return type(value) is _dt.date
    return type(value) is str


def coerce_literal(value, vtype):
    """Losslessly adapt a parsed literal to a column type.

    int -> FLOAT widens; a string in ISO form -> DATE parses.  Anything
    else that does not already match raises TypeMismatchError.
    """
    if value is None or value_matches(vtype, value):
        return value
    if vtype is ValueType.FLOAT and type(value) is int:
        return float(value)
    if vtype is ValueType.DATE and type(value) is str:
        return parse_date(value)
    raise TypeMismatchError(
        f"literal {value!r} is not a {vtype.value} and cannot be losslessly adapted"
    )


def format_value(value):
    """Render a value for CSV output and plan text (dates as ISO)."""
    if value is None:
        return ""
    if isinstance(value, _dt.date):
        return value.isoformat()
    return str(value)


def parse_csv_value(text, vtype):
    """Parse one CSV cell per the declared column type ('' is null)."""
    if text == "":
        return None
    if vtype is ValueType.INT:
        return int(text)
    if vtype is ValueType.FLOAT:
        return float(text)
    if vtype is ValueType.DATE:
        return parse_date(text)
    return text


class Schema:
    """Ordered attribute list with types, plus an optional primary key.

    Attribute names are unique (case-normalized to upper at parse time
    by the frontend; the schema itself just enforces uniqueness).
    """

    __slots__ = ("name", "attrs", "types", "primary_key", "_index")

    def __init__(self, name, columns, primary_key=None):
        self.name = name
        self.attrs = tuple(c[0] for c in columns)
        self.types = tuple(c[1] for c in columns)
        if len(set(self.attrs)) != len(self.attrs):
            raise CatalogError(f"duplicate attribute name in table {name}")
        self._index = {a: i for i, a in enumerate(self.attrs)}
        if primary_key is not None and primary_key not in self._index:
            raise CatalogError(f"primary key {primary_key} not a column of {name}")
        self.primary_key = primary_key

    def index(self, attr):
        try:
            return self._index[attr]
        except KeyError:
            raise CatalogError(f"table {self.name} has no column {attr}") from None

    def has(self, attr):
        return attr in self._index

    def type_of(self, attr):
        return self.types[self.index(attr)]

    def arity(self):
        return len(self.attrs)

    def validate_row(self, values):
        """Type-check a full row; raises TypeMismatchError on any cell."""
        if len(values) != len(self.attrs):
            raise TypeMismatchError(
                f"table {self.name} expects {len(self.attrs)} values, got {len(values)}"
            )
        for attr, vtype, v in zip(self.attrs, self.types, values):
            if not value_matches(vtype, v):
                raise TypeMismatchError(
                    f"{self.name}.{attr} expects {vtype.value}, got {v!r}"
                )
        return tuple(values)

    def __eq__(self, other):
        return (
            isinstance(other, Schema)
            and self.name == other.name
            and self.attrs == other.attrs
            and self.types == other.types
            and self.primary_key == other.primary_key
        )

    def __hash__(self):
        return hash((self.name, self.attrs, self.types, self.primary_key))

    def __repr__(self):
        cols = ", ".join(f"{a} {t.value}" for a, t in zip(self.attrs, self.types))
        pk = f", pk={self.primary_key}" if self.primary_key else ""
        return f"Schema({self.name}: {cols}{pk})"
