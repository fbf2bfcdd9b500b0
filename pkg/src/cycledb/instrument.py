"""Work counters shared by the storage layer, operators, and the baseline.

The same counter type (and the same counting sort key) is used on both
the shared engine side and the query-at-a-time oracle side, so
cross-executor work comparisons measure like against like.
"""

from __future__ import annotations

_FIELDS = (
    "tuples_in",
    "tuples_out",
    "probes",
    "builds",
    "lookups",
    "comparisons",
    "groups",
    "touched_rows",
    "wall_ns",
)


class Counters:
    __slots__ = _FIELDS

    def __init__(self):
        for f in _FIELDS:
            setattr(self, f, 0)

    def add(self, other):
        for f in _FIELDS:
            setattr(self, f, getattr(self, f) + getattr(other, f))
        return self

    def as_dict(self):
        return {f: getattr(self, f) for f in _FIELDS}

    def copy(self):
        c = Counters()
        c.add(self)
        return c

    def __repr__(self):
        body = ", ".join(f"{f}={getattr(self, f)}" for f in _FIELDS if getattr(self, f))
        return f"Counters({body})"


class OrderKey:
    """Sort key wrapper that counts pairwise comparisons.

    Total order: (key per direction, row-id tiebreak); nulls sort last
    in both directions.  sorted() only needs __lt__.
    """

    __slots__ = ("null_rank", "key", "rid", "desc", "ctr")

    def __init__(self, key, rid, desc, ctr):
        self.null_rank = 1 if key is None else 0
        self.key = key
        self.rid = rid
        self.desc = desc
        self.ctr = ctr

    def __lt__(self, other):
        self.ctr.comparisons += 1
        if self.null_rank != other.null_rank:
            return self.null_rank < other.null_rank
        if self.null_rank == 0 and self.key != other.key:
            if self.desc:
                return other.key < self.key
            return self.key < other.key
        return self.rid < other.rid
