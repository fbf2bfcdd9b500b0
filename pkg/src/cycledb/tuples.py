"""Shared tuples: one row, many interested queries.

A SharedTuple carries a row's values once plus the set of query ids it
belongs to (a QuerySet), instead of one copy per query.  Expanding to
first normal form yields one (values, row_id, qid) triple per member
id; compacting those triples restores the identical SharedTuple.
"""

from __future__ import annotations

from cycledb.querysets import check_queryset, make_queryset


class SharedTuple:
    """Immutable-by-convention row with query-membership tags.

    row_id is an int for base-table rows and a flat tuple of the
    constituent row ids for derived rows (join outputs, group rows use
    their group key), so ordering tie-breaks stay deterministic.
    """

    __slots__ = ("values", "queries", "row_id")

    def __init__(self, values, queries, row_id):
        self.values = values
        self.queries = queries
        self.row_id = row_id

    def __repr__(self):
        return f"SharedTuple({self.values!r}, q={self.queries!r}, rid={self.row_id!r})"

    def __eq__(self, other):
        return (
            isinstance(other, SharedTuple)
            and self.values == other.values
            and self.queries == other.queries
            and self.row_id == other.row_id
        )

    def __hash__(self):
        return hash((self.values, self.queries, self.row_id))


class EndOfStream:
    """Per-query end marker: producer is done with qid for this cycle.

    Exactly one per (producer edge, activated subquery) per cycle.
    """

    __slots__ = ("qid",)

    def __init__(self, qid):
        self.qid = qid

    def __repr__(self):
        return f"EndOfStream(q{self.qid})"


def rid_key(row_id):
    """Normalize a row id for cross-shape comparisons (int -> 1-tuple)."""
    return row_id if type(row_id) is tuple else (row_id,)


def expand_nf1(t):
    """First-normal-form view: one (values, row_id, qid) per member."""
    check_queryset(t.queries)
    return [(t.values, t.row_id, qid) for qid in t.queries]


def compact_nf1(rows):
    """Rebuild a SharedTuple from NF1 triples of one row.

    All triples must agree on values and row_id; duplicate qids
    collapse.  Inverse of expand_nf1.
    """
    if not rows:
        raise ValueError("cannot compact an empty row group")
    values, row_id, _ = rows[0]
    for v, r, _ in rows:
        if v != values or r != row_id:
            raise ValueError("compact_nf1 expects triples of a single row")
    return SharedTuple(values, make_queryset(q for _, _, q in rows), row_id)
