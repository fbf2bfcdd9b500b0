"""Conjunctive predicates over single rows.

A predicate is a conjunction of atoms (attr OP operand); operands are
constants or numbered parameter slots.  Comparators: = != < <= > >=
and prefix LIKE.  An atom involving null on either side is false, so a
row with a null cell never satisfies any atom on that column.

Lifecycle: the frontend builds Predicate templates (operands may be
Param slots, constants already type-adjusted against the catalog);
bind() substitutes parameters; resolve() pins attribute indexes
against a concrete schema and yields a BoundPredicate ready for the
per-row hot path.  Binding never mutates the template.
"""

from __future__ import annotations

from cycledb.errors import BindError, TypeMismatchError
from cycledb.values import ValueType, coerce_literal, format_value, value_matches

COMPARATORS = ("=", "!=", "<", "<=", ">", ">=", "LIKE")


class Param:
    """Positional parameter slot inside a statement template."""

    __slots__ = ("slot",)

    def __init__(self, slot):
        self.slot = slot

    def __repr__(self):
        return f"Param({self.slot})"

    def __eq__(self, other):
        return isinstance(other, Param) and other.slot == self.slot

    def __hash__(self):
        return hash(("param", self.slot))


class Atom:
    __slots__ = ("attr", "op", "operand")

    def __init__(self, attr, op, operand):
        if op not in COMPARATORS:
            raise TypeMismatchError(f"unknown comparator {op!r}")
        self.attr = attr
        self.op = op
        self.operand = operand

    def __repr__(self):
        return f"Atom({self.attr} {self.op} {self.operand!r})"

    def __eq__(self, other):
        return (
            isinstance(other, Atom)
            and self.attr == other.attr
            and self.op == other.op
            and self.operand == other.operand
        )

    def __hash__(self):
        return hash((self.attr, self.op, self.operand))

    def render(self):
        if isinstance(self.operand, Param):
            rhs = "?"
        elif isinstance(self.operand, str):
            rhs = "'" + self.operand.replace("'", "''") + "'"
        elif self.operand is None:
            rhs = "NULL"
        else:
            rhs = format_value(self.operand)
        return f"{self.attr} {self.op} {rhs}"


class Predicate:
    """Immutable conjunction of atoms; empty conjunction is TRUE."""

    __slots__ = ("atoms",)

    def __init__(self, atoms=()):
        self.atoms = tuple(atoms)

    def is_true(self):
        return not self.atoms

    def params_used(self):
        return sorted(
            a.operand.slot for a in self.atoms if isinstance(a.operand, Param)
        )

    def bind(self, params):
        """Substitute parameter slots; returns a new fully-constant Predicate."""
        if not any(isinstance(a.operand, Param) for a in self.atoms):
            return self
        out = []
        for a in self.atoms:
            if isinstance(a.operand, Param):
                try:
                    v = params[a.operand.slot]
                except IndexError:
                    raise BindError(
                        f"missing parameter {a.operand.slot} for atom {a.render()}"
                    ) from None
                out.append(Atom(a.attr, a.op, v))
            else:
                out.append(a)
        return Predicate(out)

    def resolve(self, schema):
        """Pin attribute indexes and type-check against a schema."""
        return BoundPredicate(self, schema)

    def render(self):
        return " AND ".join(a.render() for a in self.atoms)

    def __eq__(self, other):
        return isinstance(other, Predicate) and other.atoms == self.atoms

    def __hash__(self):
        return hash(self.atoms)

    def __repr__(self):
        return f"Predicate({self.render() or 'TRUE'})"


def _check_operand(schema, attr, op, value):
    vtype = schema.type_of(attr)
    if value is None:
        return None
    value = coerce_literal(value, vtype)
    if op == "LIKE":
        if vtype is not ValueType.STR:
            raise TypeMismatchError(f"LIKE requires a string column, {attr} is {vtype.value}")
        if "%" in value[:-1] or "_" in value:
            raise TypeMismatchError(f"only prefix LIKE patterns are supported: {value!r}")
    elif not value_matches(vtype, value):
        raise TypeMismatchError(
            f"cannot compare {attr} ({vtype.value}) with {value!r}"
        )
    return value


def _make_test(op, value):
    # null operand: atom can never hold
    if value is None:
        return lambda cell: False
    if op == "=":
        return lambda cell: cell is not None and cell == value
    if op == "!=":
        return lambda cell: cell is not None and cell != value
    if op == "<":
        return lambda cell: cell is not None and cell < value
    if op == "<=":
        return lambda cell: cell is not None and cell <= value
    if op == ">":
        return lambda cell: cell is not None and cell > value
    if op == ">=":
        return lambda cell: cell is not None and cell >= value
    # prefix LIKE; bare pattern means exact match
    if value.endswith("%"):
        prefix = value[:-1]
        return lambda cell: cell is not None and cell.startswith(prefix)
    return lambda cell: cell is not None and cell == value


class BoundPredicate:
    """Schema-resolved, fully-constant predicate for per-row evaluation.

    eq_consts exposes the equality atoms (index, constant) so a shared
    scan can group them into per-attribute hash look-ups; residual
    holds the remaining (index, test) pairs.
    """

    __slots__ = ("atoms", "tests", "eq_consts", "residual")

    def __init__(self, predicate, schema):
        tests = []
        eq_consts = []
        residual = []
        for a in predicate.atoms:
            if isinstance(a.operand, Param):
                raise BindError(f"unbound parameter in atom {a.render()}")
            idx = schema.index(a.attr)
            value = _check_operand(schema, a.attr, a.op, a.operand)
            test = _make_test(a.op, value)
            tests.append((idx, test))
            if a.op == "=" and value is not None:
                eq_consts.append((idx, value))
            else:
                residual.append((idx, test))
        self.atoms = predicate.atoms
        self.tests = tuple(tests)
        self.eq_consts = tuple(eq_consts)
        self.residual = tuple(residual)

    def eval(self, values):
        for idx, test in self.tests:
            if not test(values[idx]):
                return False
        return True

    def eval_residual(self, values):
        for idx, test in self.residual:
            if not test(values[idx]):
                return False
        return True

    def __repr__(self):
        return f"BoundPredicate({' AND '.join(a.render() for a in self.atoms) or 'TRUE'})"


TRUE = Predicate()


def eval_predicate(bound, t):
    """Evaluate a BoundPredicate against a SharedTuple or a raw row."""
    values = t.values if hasattr(t, "values") else t
    return bound.eval(values)
