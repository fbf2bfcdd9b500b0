"""Versioned in-memory tables with shared scans and batched index probes.

Every write carries the engine-wide arrival timestamp of its admission;
a row version is the value tuple between two writes.  A query reading
at snapshot s sees exactly the versions created by writes with ts < s
and not yet closed by one: visible(v, s) iff
valid_from < s and (valid_to open or valid_to >= s).
Initial load populates versions with valid_from = 0, below every
admissible snapshot.

The two shared access methods work on whole admission batches:

- shared_scan makes one pass over the version chains for all queries
  of a cycle.  Equality atoms are grouped per attribute into hashes of
  constant -> interested queries, so a row resolves all k equality
  predicates on an attribute with one probe instead of k tests
  (predicate indexing: the scan joins data against queries).  Range
  and residual atoms are evaluated per query.
- shared_index_probe executes a batch of point look-ups sorted by key,
  probing each distinct key once and fanning the fetched rows out to
  all requesting queries.

Both emit SharedTuples tagged with every interested query and one
EndOfStream per query.
"""

from __future__ import annotations

import csv

from cycledb.btree import BPlusTree
from cycledb.errors import StorageError, TypeMismatchError
from cycledb.tuples import EndOfStream, SharedTuple
from cycledb.values import parse_csv_value

__all__ = [
    "Version",
    "TableStore",
    "ScanQuery",
    "ProbeQuery",
    "InsertOp",
    "UpdateOp",
    "DeleteOp",
    "load_table",
    "load_csv",
]


class Version:
    """One row incarnation: [valid_from, valid_to) in arrival-ts space."""

    __slots__ = ("row_id", "values", "valid_from", "valid_to")

    def __init__(self, row_id, values, valid_from, valid_to=None):
        self.row_id = row_id
        self.values = values
        self.valid_from = valid_from
        self.valid_to = valid_to

    def visible_at(self, snapshot):
        return self.valid_from < snapshot and (
            self.valid_to is None or self.valid_to >= snapshot
        )

    def __repr__(self):
        to = "open" if self.valid_to is None else self.valid_to
        return f"Version(rid={self.row_id}, [{self.valid_from},{to}), {self.values!r})"


class ScanQuery:
    __slots__ = ("qid", "pred", "snapshot")

    def __init__(self, qid, pred, snapshot):
        self.qid = qid
        self.pred = pred  # BoundPredicate
        self.snapshot = snapshot


class ProbeQuery:
    __slots__ = ("qid", "key", "snapshot", "pred")

    def __init__(self, qid, key, snapshot, pred=None):
        self.qid = qid
        self.key = key
        self.snapshot = snapshot
        self.pred = pred  # full residual BoundPredicate or None


class InsertOp:
    __slots__ = ("table", "values")

    def __init__(self, table, values):
        self.table = table
        self.values = values


class UpdateOp:
    __slots__ = ("table", "assignments", "pred")

    def __init__(self, table, assignments, pred):
        self.table = table
        self.assignments = tuple(assignments)  # (attr_index, value)
        self.pred = pred


class DeleteOp:
    __slots__ = ("table", "pred")

    def __init__(self, table, pred):
        self.table = table
        self.pred = pred


class TableStore:
    def __init__(self, schema):
        self.schema = schema
        self._chains = {}  # rid -> [Version, ...] chronological
        self._order = []  # rids in first-insertion order (scan order)
        self.indexes = {}  # attr name -> BPlusTree
        self._next_rid = 1
        self._last_write_ts = 0
        self.live_rows = 0
        if schema.primary_key:
            self.create_index(schema.primary_key)

    # -- setup ------------------------------------------------------------

    def create_index(self, attr):
        idx = self.schema.index(attr)
        tree = BPlusTree()
        for rid in self._order:
            for v in self._chains[rid]:
                key = v.values[idx]
                if key is not None and rid not in tree.get(key):
                    tree.insert(key, rid)
        self.indexes[attr] = tree
        return tree

    def _load_rows(self, rows):
        pk_idx = self.schema.index(self.schema.primary_key) if self.schema.primary_key else None
        for n, row in enumerate(rows):
            try:
                values = self.schema.validate_row(tuple(row))
            except TypeMismatchError as exc:
                raise TypeMismatchError(f"row {n}: {exc}") from None
            rid = self._next_rid
            self._next_rid += 1
            if pk_idx is not None:
                key = values[pk_idx]
                if key is None:
                    raise StorageError(f"row {n}: null primary key")
                if self.indexes[self.schema.primary_key].get(key):
                    raise StorageError(
                        f"row {n}: duplicate primary key {key!r} in {self.schema.name}"
                    )
            self._chains[rid] = [Version(rid, values, 0)]
            self._order.append(rid)
            self.live_rows += 1
            self._index_version(rid, values)

    def _index_version(self, rid, values, old_values=None):
        for attr, tree in self.indexes.items():
            i = self.schema.index(attr)
            key = values[i]
            if key is None:
                continue
            if old_values is not None and old_values[i] == key:
                continue  # historical entry already covers this key
            tree.insert(key, rid)

    # -- writes ------------------------------------------------------------

    def _check_ts(self, ts):
        if ts <= self._last_write_ts:
            raise StorageError(
                f"write timestamp {ts} not after last applied {self._last_write_ts}"
            )
        self._last_write_ts = ts

    def _open_version(self, rid):
        chain = self._chains.get(rid)
        if chain and chain[-1].valid_to is None:
            return chain[-1]
        return None

    def _pk_conflict(self, key):
        pk = self.schema.primary_key
        i = self.schema.index(pk)
        for rid in self.indexes[pk].get(key):
            v = self._open_version(rid)
            if v is not None and v.values[i] == key:
                return True
        return False

    def apply_write(self, op, ts):
        """Apply one write at its arrival timestamp; returns affected rows."""
        self._check_ts(ts)
        if isinstance(op, InsertOp):
            return self._apply_insert(op, ts)
        if isinstance(op, UpdateOp):
            return self._apply_update(op, ts)
        if isinstance(op, DeleteOp):
            return self._apply_delete(op, ts)
        raise StorageError(f"unknown write op {op!r}")

    def _apply_insert(self, op, ts):
        values = self.schema.validate_row(tuple(op.values))
        pk = self.schema.primary_key
        if pk:
            key = values[self.schema.index(pk)]
            if key is None:
                raise StorageError(f"null primary key on insert into {self.schema.name}")
            if self._pk_conflict(key):
                raise StorageError(
                    f"duplicate primary key {key!r} on insert into {self.schema.name}"
                )
        rid = self._next_rid
        self._next_rid += 1
        self._chains[rid] = [Version(rid, values, ts)]
        self._order.append(rid)
        self.live_rows += 1
        self._index_version(rid, values)
        return 1

    def _matching_open(self, pred):
        out = []
        for rid in self._order:
            v = self._open_version(rid)
            if v is not None and (pred is None or pred.eval(v.values)):
                out.append(v)
        return out

    def _apply_update(self, op, ts):
        pk = self.schema.primary_key
        pk_idx = self.schema.index(pk) if pk else None
        affected = 0
        for v in self._matching_open(op.pred):
            new_values = list(v.values)
            for i, val in op.assignments:
                new_values[i] = val
            new_values = self.schema.validate_row(tuple(new_values))
            if pk is not None and new_values[pk_idx] != v.values[pk_idx]:
                key = new_values[pk_idx]
                if key is None or self._pk_conflict(key):
                    raise StorageError(
                        f"update would duplicate primary key {key!r} in {self.schema.name}"
                    )
            v.valid_to = ts
            self._chains[v.row_id].append(Version(v.row_id, new_values, ts))
            self._index_version(v.row_id, new_values, old_values=v.values)
            affected += 1
        return affected

    def _apply_delete(self, op, ts):
        affected = 0
        for v in self._matching_open(op.pred):
            v.valid_to = ts
            affected += 1
        self.live_rows -= affected
        return affected

    # -- shared access methods ----------------------------------------------

    def shared_scan(self, queries, counters):
        """One pass over all version chains serving a whole query batch.

        Yields SharedTuples (full interest sets) then one EndOfStream
        per query, ascending qid.
        """
        queries = sorted(queries, key=lambda q: q.qid)
        eq_groups = {}  # attr idx -> {const: [qid,...]}
        eq_need = {}
        by_qid = {}
        no_eq = []
        for q in queries:
            by_qid[q.qid] = q
            if q.pred.eq_consts:
                eq_need[q.qid] = len(q.pred.eq_consts)
                for idx, const in q.pred.eq_consts:
                    eq_groups.setdefault(idx, {}).setdefault(const, []).append(q.qid)
            else:
                no_eq.append(q)
        eq_items = list(eq_groups.items())

        for rid in self._order:
            for v in self._chains[rid]:
                counters.touched_rows += 1
                members = []
                values = v.values
                for q in no_eq:
                    if v.visible_at(q.snapshot) and q.pred.eval(values):
                        members.append(q.qid)
                if eq_items:
                    tally = {}
                    for idx, groups in eq_items:
                        bucket = groups.get(values[idx])
                        if bucket:
                            for qid in bucket:
                                tally[qid] = tally.get(qid, 0) + 1
                    for qid, hits in tally.items():
                        if hits != eq_need[qid]:
                            continue
                        q = by_qid[qid]
                        if v.visible_at(q.snapshot) and q.pred.eval_residual(values):
                            members.append(qid)
                    if members and len(members) > 1:
                        members.sort()
                if members:
                    counters.tuples_out += 1
                    yield SharedTuple(values, tuple(members), rid)
        for q in queries:
            yield EndOfStream(q.qid)

    def shared_index_probe(self, attr, probes, counters):
        """Batched point look-ups: distinct keys probed once, fanned out.

        Yields SharedTuples in (key, chain) order then EndOfStream per
        distinct probing qid.
        """
        tree = self.indexes.get(attr)
        if tree is None:
            raise StorageError(f"no index on {self.schema.name}.{attr}")
        idx = self.schema.index(attr)
        by_key = {}
        qids = sorted({p.qid for p in probes})
        for p in probes:
            if p.key is not None:
                by_key.setdefault(p.key, []).append(p)
        for key in sorted(by_key):
            counters.lookups += 1
            group = by_key[key]
            for rid in tree.get(key):
                for v in self._chains[rid]:
                    if v.values[idx] != key:
                        continue  # historical index entry for another key
                    counters.touched_rows += 1
                    members = []
                    for p in group:
                        if v.visible_at(p.snapshot) and (
                            p.pred is None or p.pred.eval(v.values)
                        ):
                            members.append(p.qid)
                    if members:
                        members = sorted(set(members))
                        counters.tuples_out += 1
                        yield SharedTuple(v.values, tuple(members), rid)
        for qid in qids:
            yield EndOfStream(qid)

    # -- plain per-query access (baseline executor) ---------------------------

    def scan_at(self, snapshot, counters=None):
        """All (rid, values) visible at snapshot, storage order."""
        for rid in self._order:
            for v in self._chains[rid]:
                if counters is not None:
                    counters.touched_rows += 1
                if v.visible_at(snapshot):
                    yield rid, v.values

    def probe_at(self, attr, key, snapshot, counters=None):
        """Point look-up of one key at one snapshot."""
        tree = self.indexes.get(attr)
        if tree is None:
            raise StorageError(f"no index on {self.schema.name}.{attr}")
        if key is None:
            return []
        if counters is not None:
            counters.lookups += 1
        idx = self.schema.index(attr)
        out = []
        for rid in tree.get(key):
            for v in self._chains[rid]:
                if counters is not None:
                    counters.touched_rows += 1
                if v.values[idx] == key and v.visible_at(snapshot):
                    out.append((rid, v.values))
        return out

    # -- maintenance -----------------------------------------------------------

    def gc(self):
        """Drop versions no future snapshot can see (all closed ones).

        Safe only at cycle boundaries when no admitted query is still
        reading.  Prunes index entries whose (key, rid) no longer has a
        live carrier.  Returns number of versions collected.
        """
        removed = 0
        dead_rids = []
        for rid in self._order:
            chain = self._chains[rid]
            retained = [v for v in chain if v.valid_to is None]
            closed = [v for v in chain if v.valid_to is not None]
            if not closed:
                continue
            removed += len(closed)
            if retained:
                self._chains[rid] = retained
            else:
                del self._chains[rid]
                dead_rids.append(rid)
            for attr, tree in self.indexes.items():
                i = self.schema.index(attr)
                keep = {v.values[i] for v in retained}
                for v in closed:
                    key = v.values[i]
                    if key is not None and key not in keep:
                        tree.remove(key, rid)
        if dead_rids:
            dead = set(dead_rids)
            self._order = [r for r in self._order if r not in dead]
        return removed

    def version_count(self):
        return sum(len(c) for c in self._chains.values())

    def check_invariants(self):
        """Version-interval sanity plus index consistency (tests only)."""
        for rid in self._order:
            chain = self._chains[rid]
            last_to = None
            for n, v in enumerate(chain):
                assert v.valid_to is None or v.valid_from < v.valid_to, (
                    f"empty interval on rid {rid}"
                )
                if n:
                    assert last_to is not None and v.valid_from >= last_to, (
                        f"overlapping versions on rid {rid}"
                    )
                last_to = v.valid_to
            for n, v in enumerate(chain[:-1]):
                assert v.valid_to is not None, f"open non-final version on rid {rid}"
        for attr, tree in self.indexes.items():
            i = self.schema.index(attr)
            expect = {}
            for rid in self._order:
                for v in self._chains[rid]:
                    key = v.values[i]
                    if key is not None:
                        expect.setdefault(key, set()).add(rid)
            got = {k: set(rids) for k, rids in tree.items()}
            assert got == expect, f"index on {attr} inconsistent"
            tree.check()


def load_table(schema, rows):
    """Build a store whose rows are all valid from timestamp 0."""
    store = TableStore(schema)
    store._load_rows(rows)
    return store


def load_csv(schema, path):
    """Load a table from CSV with a header row; '' is null, dates ISO."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StorageError(f"{path}: empty file, header required") from None
        header = [h.strip().upper() for h in header]
        if tuple(header) != schema.attrs:
            raise StorageError(
                f"{path}: header {header} does not match schema {list(schema.attrs)}"
            )
        rows = []
        for n, raw in enumerate(reader, start=2):
            if len(raw) != schema.arity():
                raise StorageError(f"{path}:{n}: expected {schema.arity()} cells")
            try:
                rows.append(
                    tuple(
                        parse_csv_value(cell, vtype)
                        for cell, vtype in zip(raw, schema.types)
                    )
                )
            except (ValueError, TypeMismatchError) as exc:
                raise StorageError(f"{path}:{n}: {exc}") from None
    return load_table(schema, rows)
