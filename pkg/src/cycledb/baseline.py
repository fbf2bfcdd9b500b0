"""Query-at-a-time reference execution over the same stores.

Three layers. LogicalExecutor interprets one statement's plan tree
directly against the tables, index-assisted where the pushed-down
predicate allows. SerialReplayer applies an admission-ordered trace one
operation at a time and is the ground truth batched runs are checked
against. BaselineEngine puts the same per-statement loop behind an
admit/poll surface with write barriers, giving throughput comparisons a
live opponent.

All three share the batched engine's stores, counters, and counting
sort key, so cross-executor work comparisons measure like against like.
Result rows carry the storage row ids internally; sort tie-breaking is
therefore identical to the shared operators', and ordered queries can
be compared position by position.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque

from cycledb.errors import EngineError, StorageError
from cycledb.instrument import Counters, OrderKey
from cycledb.operators import null_safe_key
from cycledb.planner import (
    AccessPlan,
    GroupByPlan,
    JoinPlan,
    OutputPlan,
    SortPlan,
    WritePlan,
    compile_single,
)
from cycledb.predicates import Param, _make_test
from cycledb.sqlfront import bind
from cycledb.storage import DeleteOp, InsertOp, UpdateOp, load_table
from cycledb.tuples import rid_key


class ResultEnvelope:
    """Terminal outcome of one admitted operation.

    Exactly one envelope exists per qid once the operation finished;
    polling before that yields nothing. rows is set for reads, affected
    for applied writes, error when the operation was refused.
    """

    __slots__ = (
        "qid",
        "kind",
        "rows",
        "affected",
        "error",
        "cycle",
        "submitted_at",
        "finished_at",
    )

    def __init__(
        self,
        qid,
        kind,
        rows=None,
        affected=None,
        error=None,
        cycle=None,
        submitted_at=0.0,
        finished_at=0.0,
    ):
        self.qid = qid
        self.kind = kind
        self.rows = rows
        self.affected = affected
        self.error = error
        self.cycle = cycle
        self.submitted_at = submitted_at
        self.finished_at = finished_at

    @property
    def completed(self):
        return True

    @property
    def failed(self):
        return self.error is not None

    @property
    def latency_s(self):
        return self.finished_at - self.submitted_at

    def __repr__(self):
        tail = f"error={self.error!r}" if self.failed else (
            f"rows={len(self.rows)}" if self.kind == "read" else f"affected={self.affected}"
        )
        return f"ResultEnvelope(q{self.qid}, {self.kind}, {tail})"


def bind_write(plan, params, schema):
    """Write-plan template + parameters -> concrete storage operation."""

    def value(v):
        return params[v.slot] if isinstance(v, Param) else v

    if plan.kind == "INSERT":
        return InsertOp(plan.table, tuple(value(v) for v in plan.values))
    pred = plan.pred.bind(params).resolve(schema) if plan.pred.atoms else None
    if plan.kind == "UPDATE":
        assignments = tuple((i, value(v)) for i, v in plan.assignments)
        return UpdateOp(plan.table, assignments, pred)
    return DeleteOp(plan.table, pred)


class LogicalExecutor:
    """Interprets one logical plan at a time, at one snapshot."""

    def __init__(self, catalog, stores, stats=None):
        self.catalog = catalog
        self.stores = stores
        self.stats = dict(stats or {})
        self._plans = {}

    def plan_for(self, prepared, join_method=None):
        key = (prepared.statement_id, join_method)
        plan = self._plans.get(key)
        if plan is None:
            plan = compile_single(prepared.resolved, self.stats, join_method)
            self._plans[key] = plan
        return plan

    def execute(self, instance, counters=None, join_method=None):
        """Projected result rows of one bound read, in plan order."""
        plan = self.plan_for(instance.prepared, join_method)
        if not isinstance(plan, OutputPlan):
            raise EngineError("execute() takes a SELECT instance")
        c = counters if counters is not None else Counters()
        rows = self._rows(plan.child, instance.params, instance.snapshot, c)
        c.tuples_out += len(rows)
        return [tuple(values[i] for i in plan.projection) for _, values in rows]

    def apply_write(self, instance):
        """Apply one bound write at its admission timestamp."""
        plan = self.plan_for(instance.prepared)
        if not isinstance(plan, WritePlan):
            raise EngineError("apply_write() takes a write instance")
        op = bind_write(plan, instance.params, self.catalog[plan.table])
        return self.stores[plan.table].apply_write(op, instance.arrival)

    # -- interpreters; each returns [(rid, values)] --------------------------------

    def _rows(self, plan, params, snapshot, c):
        if isinstance(plan, AccessPlan):
            return self._access(plan, params, snapshot, c)
        if isinstance(plan, JoinPlan):
            return self._join(plan, params, snapshot, c)
        if isinstance(plan, SortPlan):
            return self._sort(plan, params, snapshot, c)
        if isinstance(plan, GroupByPlan):
            return self._group(plan, params, snapshot, c)
        raise EngineError(f"cannot interpret plan node {plan!r}")

    def _access(self, plan, params, snapshot, c):
        store = self.stores[plan.table]
        pred = plan.pred.bind(params).resolve(store.schema)
        for idx, key in pred.eq_consts:
            attr = store.schema.attrs[idx]
            if attr in store.indexes:
                hits = store.probe_at(attr, key, snapshot, c)
                return [(rid, v) for rid, v in hits if pred.eval(v)]
        return [(rid, v) for rid, v in store.scan_at(snapshot, c) if pred.eval(v)]

    def _join(self, plan, params, snapshot, c):
        outer = self._rows(plan.outer, params, snapshot, c)
        okey = list(plan.outer.schema).index(plan.outer_key)

        if plan.method == "inl":
            store = self.stores[plan.inner.table]
            ipred = plan.inner.pred.bind(params).resolve(store.schema)
            attr = plan.inner_key[1]
            out = []
            for orid, ov in outer:
                key = ov[okey]
                if key is None:
                    continue
                for irid, iv in store.probe_at(attr, key, snapshot, c):
                    if ipred.eval(iv):
                        out.append((rid_key(orid) + rid_key(irid), ov + iv))
            return out

        inner = self._access(plan.inner, params, snapshot, c)
        ikey = list(plan.inner.schema).index(plan.inner_key)
        if plan.build_is_outer:
            build, bkey = outer, okey
            probe, pkey = inner, ikey
        else:
            build, bkey = inner, ikey
            probe, pkey = outer, okey
        table = {}
        for brid, bv in build:
            c.builds += 1
            k = bv[bkey]
            if k is not None:
                table.setdefault(k, []).append((brid, bv))
        out = []
        for prid, pv in probe:
            c.probes += 1
            k = pv[pkey]
            if k is None:
                continue
            for brid, bv in table.get(k, ()):
                if plan.build_is_outer:
                    out.append((rid_key(brid) + rid_key(prid), bv + pv))
                else:
                    out.append((rid_key(prid) + rid_key(brid), pv + bv))
        return out

    def _sort(self, plan, params, snapshot, c):
        rows = self._rows(plan.child, params, snapshot, c)
        key_idx = list(plan.child.schema).index(plan.key)
        ranked = [
            (OrderKey(v[key_idx], (0,) + rid_key(rid), plan.desc, c), rid, v)
            for rid, v in rows
        ]
        ranked.sort(key=lambda e: e[0])
        out = [(rid, v) for _, rid, v in ranked]
        if plan.limit is not None:
            out = out[: plan.limit]
        return out

    def _group(self, plan, params, snapshot, c):
        rows = self._rows(plan.child, params, snapshot, c)
        cols = list(plan.child.schema)
        key_idxs = [cols.index(k) for k in plan.keys]
        arg_idxs = [
            None if lineage is None else cols.index(lineage)
            for _, lineage in plan.aggs
        ]
        groups = {}
        for _, v in rows:
            key = tuple(v[i] for i in key_idxs)
            states = groups.get(key)
            if states is None:
                states = [0 if f == "COUNT" else None for f, _ in plan.aggs]
                groups[key] = states
            for slot, ((func, _), arg) in enumerate(zip(plan.aggs, arg_idxs)):
                if arg is None:
                    states[slot] += 1  # COUNT(*)
                    continue
                value = v[arg]
                if value is None:
                    continue  # nulls never contribute
                state = states[slot]
                if func == "COUNT":
                    states[slot] = state + 1
                elif func == "SUM":
                    states[slot] = value if state is None else state + value
                elif func == "MIN":
                    states[slot] = value if state is None or value < state else state
                elif func == "MAX":
                    states[slot] = value if state is None or value > state else state
                elif state is None:  # AVG
                    states[slot] = [value, 1]
                else:
                    state[0] += value
                    state[1] += 1
        c.groups += len(groups)

        def final(func, state):
            if func == "AVG":
                return None if state is None else state[0] / state[1]
            return state

        tests = []
        for term, op, operand in plan.having:
            if isinstance(operand, Param):
                operand = params[operand.slot]
            tests.append((term, _make_test(op, operand)))

        agg_index = {fa: i for i, fa in enumerate(plan.aggs)}
        out = []
        for key in sorted(groups, key=null_safe_key):
            finals = [final(f, s) for (f, _), s in zip(plan.aggs, groups[key])]
            ok = True
            for term, test in tests:
                if term[0] == "key":
                    subject = key[list(plan.keys).index(term[1])]
                else:
                    subject = finals[agg_index[term[1:]]]
                if not test(subject):
                    ok = False
                    break
            if ok:
                out.append((null_safe_key(key), key + tuple(finals)))
        return out


class SerialReplayer:
    """Admission-ordered, one-at-a-time trace execution.

    Ground truth for batch equivalence: operation i runs to completion
    against exactly the writes of operations 1..i-1, at snapshot i.
    """

    def __init__(self, catalog, data=None, stats=None):
        data = data or {}
        self.catalog = dict(catalog)
        self.stores = {
            name: load_table(schema, data.get(name, []))
            for name, schema in self.catalog.items()
        }
        self.executor = LogicalExecutor(self.catalog, self.stores, stats)
        self.counters = Counters()
        self.next_ts = 0

    def step(self, prepared, params=(), join_method=None):
        """Run one operation; returns (ts, tag, payload)."""
        self.next_ts += 1
        ts = self.next_ts
        inst = bind(prepared, params, ts, ts)
        if prepared.is_read():
            rows = self.executor.execute(inst, self.counters, join_method)
            return ts, "rows", rows
        try:
            affected = self.executor.apply_write(inst)
        except StorageError as exc:
            return ts, "error", str(exc)
        return ts, "affected", affected

    def replay(self, trace):
        """trace: (prepared, params[, join_method]) tuples in admission order."""
        return [self.step(*op) for op in trace]


class BaselineEngine:
    """One-statement-at-a-time engine behind the admit/poll surface.

    Reads run concurrently, each at its own snapshot; a write is a
    barrier that waits out every earlier operation and holds back every
    later one until applied. That reproduces admission-order visibility
    without batching, so the capacity comparison pits pure
    statement-at-a-time work against shared work.
    """

    def __init__(self, catalog, data=None, stats=None, workers=None):
        data = data or {}
        self.catalog = dict(catalog)
        self.stores = {
            name: load_table(schema, data.get(name, []))
            for name, schema in self.catalog.items()
        }
        self.executor = LogicalExecutor(self.catalog, self.stores, stats)
        self.totals = Counters()
        self.completed = 0
        self._cv = threading.Condition()
        self._queue = deque()
        self._results = {}
        self._submitted = {}
        self._ts = 0
        self._reads_running = 0
        self._write_running = False
        self._writes_applied = 0
        self._stop = False
        count = workers or min(4, os.cpu_count() or 1)
        self._threads = [
            threading.Thread(target=self._run, name=f"baseline-{i}", daemon=True)
            for i in range(count)
        ]

    def start(self):
        for t in self._threads:
            t.start()
        return self

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    def admit(self, prepared, params=()):
        with self._cv:
            if self._stop:
                raise EngineError("engine is shut down")
            self._ts += 1
            ts = self._ts
            inst = bind(prepared, params, ts, ts)
            self._queue.append(inst)
            self._submitted[ts] = time.monotonic()
            self._cv.notify_all()
        return ts

    def poll(self, qid):
        with self._cv:
            return self._results.get(qid)

    def wait(self, qid, timeout=30.0):
        deadline = time.monotonic() + timeout
        with self._cv:
            while qid not in self._results:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise EngineError(f"timed out waiting on q{qid}")
                self._cv.wait(min(remaining, 0.05))
            return self._results[qid]

    def backlog(self):
        with self._cv:
            return len(self._queue)

    def shutdown(self):
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        for t in self._threads:
            t.join(timeout=10.0)

    # -- dispatch -------------------------------------------------------------------

    def _take(self):
        """Next runnable operation in admission order; writes are barriers."""
        with self._cv:
            while not self._stop:
                if self._queue and not self._write_running:
                    head = self._queue[0]
                    if head.prepared.is_read():
                        self._queue.popleft()
                        self._reads_running += 1
                        return head
                    if self._reads_running == 0:
                        self._queue.popleft()
                        self._write_running = True
                        return head
                self._cv.wait(0.05)
            return None

    def _run(self):
        while True:
            inst = self._take()
            if inst is None:
                return
            is_read = inst.prepared.is_read()
            c = Counters()
            rows = affected = error = None
            try:
                if is_read:
                    rows = self.executor.execute(inst, c)
                else:
                    affected = self.executor.apply_write(inst)
            except EngineError as exc:
                error = str(exc)
            finished = time.monotonic()
            with self._cv:
                if is_read:
                    self._reads_running -= 1
                else:
                    self._write_running = False
                    self._writes_applied += 1
                    if self._writes_applied % 128 == 0:
                        # still inside the barrier: no read is in flight
                        for store in self.stores.values():
                            store.gc()
                self.totals.add(c)
                self.completed += 1
                self._results[inst.qid] = ResultEnvelope(
                    inst.qid,
                    "read" if is_read else "write",
                    rows=rows,
                    affected=affected,
                    error=error,
                    submitted_at=self._submitted.pop(inst.qid, finished),
                    finished_at=finished,
                )
                self._cv.notify_all()
