"""Always-on shared operator nodes and their per-cycle dataflow protocol.

Every node follows the same cycle skeleton: queries arriving while a
cycle runs are queued; the next cycle boundary drains the queue into
the active set; tuples are pushed through, and every producer closes
each query's stream with exactly one end-of-stream marker per cycle.
A node finishes its own cycle once all expected markers arrived,
emitting buffered results (for blocking operators) followed by its own
markers.

Tuples move between nodes in fixed-size vectors (default 1024) over
multi-producer single-consumer channels.  Producers with pausable
sources - the table nodes - yield while a downstream channel is
saturated, which bounds memory without ever blocking a worker.

Per-query state never lives on a node.  Each query activates a lane
(one in-edge/out-edge pair declared by the plan) and brings its bound
predicates, limit, and aggregate picks along for just that cycle; node
configuration itself is fixed for the engine lifetime.
"""

from __future__ import annotations

import threading
import time
from collections import deque

from cycledb.errors import EngineError, ProtocolError
from cycledb.instrument import Counters, OrderKey
from cycledb.predicates import _make_test
from cycledb.querysets import qs_intersect
from cycledb.storage import ProbeQuery, ScanQuery
from cycledb.tuples import EndOfStream, SharedTuple, rid_key

VECTOR_SIZE = 1024
EDGE_CAPACITY = 128  # vectors buffered per channel before producers yield


def join_tags(left, right):
    """Tag rule for a matched pair at any join: pairwise intersection.

    A pair joins for exactly the queries interested in both sides; an
    empty result drops the pair.  Kept as a seam so the verification
    harness can fault-inject a wrong rule and prove it gets caught.
    """
    return qs_intersect(left, right)


def null_safe_key(values):
    """Ordering key over possibly-null values of homogeneous columns.

    Nulls sort last and never get compared against non-null values.
    """
    return tuple((v is None, v) for v in values)


class Activation:
    """One query's per-cycle claim on one node: its lane + bound config."""

    __slots__ = ("qid", "snapshot", "in_edge", "out_edge", "cfg")

    def __init__(self, qid, snapshot, in_edge, out_edge, cfg):
        self.qid = qid
        self.snapshot = snapshot
        self.in_edge = in_edge
        self.out_edge = out_edge
        self.cfg = cfg

    def __repr__(self):
        return f"Activation(q{self.qid}, in={self.in_edge}, out={self.out_edge})"


class ProbeRequest:
    """Batched point look-ups an index join sends to its table node."""

    __slots__ = ("sender", "res_edge", "attr", "probes", "qids")

    def __init__(self, sender, res_edge, attr, probes, qids):
        self.sender = sender
        self.res_edge = res_edge
        self.attr = attr
        self.probes = probes
        self.qids = qids


class Edge:
    """Multi-producer single-consumer channel for one plan edge.

    Items are tuple vectors (tuples of SharedTuple) or EndOfStream
    markers; drain preserves push order.
    """

    __slots__ = (
        "edge_id",
        "src",
        "dst",
        "role",
        "schema",
        "capacity",
        "_items",
        "_lock",
        "on_push",
        "on_drain",
    )

    def __init__(self, edge_id, src, dst, role, schema, capacity=EDGE_CAPACITY):
        self.edge_id = edge_id
        self.src = src
        self.dst = dst
        self.role = role
        self.schema = schema
        self.capacity = capacity
        self._items = deque()
        self._lock = threading.Lock()
        self.on_push = None
        self.on_drain = None

    @classmethod
    def for_plan_edge(cls, pe, capacity=EDGE_CAPACITY):
        return cls(pe.edge_id, pe.src, pe.dst, pe.role, pe.schema, capacity)

    def push(self, item):
        with self._lock:
            self._items.append(item)
        cb = self.on_push
        if cb is not None:
            cb(self)

    def drain(self):
        with self._lock:
            if not self._items:
                return ()
            items = tuple(self._items)
            self._items.clear()
        cb = self.on_drain
        if cb is not None:
            cb(self)  # frees capacity: paused producers may resume
        return items

    def full(self):
        with self._lock:
            return len(self._items) >= self.capacity

    def pending(self):
        with self._lock:
            return len(self._items)

    def __repr__(self):
        return f"Edge(e{self.edge_id}: n{self.src}->n{self.dst} [{self.role}])"


class CollectingSink:
    """Default result sink: rows and completions per query, in order."""

    def __init__(self):
        self.rows = {}
        self.completed = []

    def deliver(self, qid, row):
        self.rows.setdefault(qid, []).append(row)

    def complete(self, qid):
        self.completed.append(qid)


class Node:
    """Cycle-skeleton base: activation queue, stream accounting, emission."""

    kind = "node"

    def __init__(self, plan_node, vector_size=VECTOR_SIZE):
        self.node_id = plan_node.node_id
        self.identity = plan_node.identity
        self.config = plan_node.config
        self.vector_size = vector_size
        self.in_edges = {}
        self.out_edges = {}
        self.counters = Counters()
        self.cycles = 0
        self.cycle_no = -1
        self.cycle_done = True
        self.active = ()
        self.last_active = 0
        self.on_ready = None
        self._lock = threading.Lock()
        self._pending = []
        self._buffers = {}
        self._expected = {}
        self._got = {}
        self._edge_active = {}
        self._out_active = {}
        self._lanes_by_in = {}

    # -- wiring (engine start) --------------------------------------------------

    def wire(self, nodes):
        """Resolve static references once all nodes and edges exist."""

    # -- admission (any time; drained only at the cycle boundary) ---------------

    def queue_activation(self, act):
        with self._lock:
            self._pending.append(act)

    # -- cycle boundary ----------------------------------------------------------

    def begin_cycle(self, cycle_no):
        if not self.cycle_done:
            raise ProtocolError(
                f"node {self.node_id} restarted before its cycle finished", cycle_no
            )
        self.cycle_no = cycle_no
        with self._lock:
            acts, self._pending = self._pending, []
        self.active = tuple(acts)
        self.last_active = len(acts)
        self._buffers = {}
        self._expected = {}
        self._got = {}
        self._edge_active = {}
        out_active = {}
        for a in acts:
            if a.in_edge is not None:
                self._expected.setdefault(a.in_edge, set()).add(a.qid)
                self._edge_active.setdefault(a.in_edge, set()).add(a.qid)
            if a.out_edge is not None:
                out_active.setdefault(a.out_edge, set()).add(a.qid)
        self._out_active = {e: tuple(sorted(s)) for e, s in out_active.items()}
        self._begin()
        # becomes steppable only once every per-cycle structure is in place:
        # a concurrently woken worker must never see a half-built node
        self.cycle_done = False
        if self._cycle_trivial():
            self._close_cycle()

    def _begin(self):
        """Subclass hook: per-cycle state reset after activation drain."""

    def _cycle_trivial(self):
        return not self.active

    def _collect_lanes(self):
        """Group this cycle's activations by their configured lanes."""
        acts = {}
        for a in self.active:
            acts.setdefault((a.in_edge, a.out_edge), set()).add(a.qid)
        self._lanes_by_in = {}
        for lane in self.config.get("lanes", ()):
            key = (lane["in"], lane["out"])
            if key in acts:
                qids = tuple(sorted(acts.pop(key)))
                self._lanes_by_in.setdefault(lane["in"], []).append((lane, qids))
        if acts:
            raise ProtocolError(
                f"node {self.node_id} activated on unknown lane {sorted(acts)[0]}",
                self.cycle_no,
            )

    # -- per-cycle work ------------------------------------------------------------

    def step(self):
        """Process available input; True if any progress was made."""
        if self.cycle_done:
            return False
        t0 = time.perf_counter_ns()
        progress = self._work()
        self.counters.wall_ns += time.perf_counter_ns() - t0
        return progress

    def _work(self):
        progress = False
        for eid, edge in self.in_edges.items():
            for item in edge.drain():
                progress = True
                if isinstance(item, EndOfStream):
                    self._note_eos(eid, item.qid)
                else:
                    for t in item:
                        self.counters.tuples_in += 1
                        self._check_tuple(eid, t)
                        self._on_tuple(eid, t)
        if not self.cycle_done and self._inputs_done():
            self._finalize()
            self._flush_all()
            self._emit_all_eos()
            self._close_cycle()
            progress = True
        return progress

    def _on_tuple(self, eid, t):
        raise NotImplementedError

    def _finalize(self):
        """Subclass hook: emit buffered results once all input arrived."""

    # -- stream accounting -----------------------------------------------------------

    def _check_tuple(self, eid, t):
        active = self._edge_active.get(eid)
        if active is None or any(q not in active for q in t.queries):
            raise ProtocolError(
                f"node {self.node_id} got tuple for inactive queries "
                f"{t.queries} on edge {eid}",
                self.cycle_no,
            )

    def _note_eos(self, eid, qid):
        exp = self._expected.get(eid, ())
        got = self._got.setdefault(eid, set())
        if qid not in exp or qid in got:
            raise ProtocolError(
                f"node {self.node_id} got stray end-of-stream for q{qid} on edge {eid}",
                self.cycle_no,
            )
        got.add(qid)

    def _edge_done(self, eid):
        return self._got.get(eid, set()) >= self._expected.get(eid, set())

    def _inputs_done(self):
        return all(self._got.get(e, set()) >= s for e, s in self._expected.items())

    # -- emission ------------------------------------------------------------------

    def _buffer_out(self, eid, t):
        buf = self._buffers.get(eid)
        if buf is None:
            buf = self._buffers[eid] = []
        buf.append(t)
        if len(buf) >= self.vector_size:
            self._flush(eid)

    def _emit(self, eid, t):
        self.counters.tuples_out += 1
        self._buffer_out(eid, t)

    def _flush(self, eid):
        buf = self._buffers.get(eid)
        if buf:
            self.out_edges[eid].push(tuple(buf))
            buf.clear()

    def _flush_all(self):
        for eid in self._buffers:
            self._flush(eid)

    def _emit_all_eos(self):
        for eid in sorted(self._out_active):
            edge = self.out_edges[eid]
            for q in self._out_active[eid]:
                edge.push(EndOfStream(q))

    def _close_cycle(self):
        self.cycle_done = True
        self.cycles += 1

    def _outputs_full(self):
        return any(e.full() for e in self.out_edges.values())

    def __repr__(self):
        return f"{type(self).__name__}(n{self.node_id})"


class TableNode(Node):
    """Owns one table: applies the batch's writes, serves one shared scan
    over all activated subqueries, then serves batched index probes.

    Its cycle ends only after every index join linked to this table has
    delivered its probe batch for the cycle (possibly empty), so probe
    results can never leak across cycles.
    """

    kind = "access"

    def __init__(self, plan_node, store, vector_size=VECTOR_SIZE):
        super().__init__(plan_node, vector_size)
        self.store = store
        self.table = plan_node.config["table"]
        self._pending_writes = []
        self._pending_expect = set()
        self._mail = []
        self._cycle_writes = ()
        self._expected_probes = set()
        self._served = set()
        self._mailq = []
        self._scan_gen = None
        self._probe_gen = None
        self._scan_edge = {}

    # -- admission helpers (runtime calls these between / during cycles)

    def queue_write(self, ts, op, callback=None):
        with self._lock:
            self._pending_writes.append((ts, op, callback))

    def expect_probes(self, sender_id):
        with self._lock:
            self._pending_expect.add(sender_id)

    def request_probes(self, req):
        """Index-join entry point; safe to call while the cycle runs."""
        with self._lock:
            self._mail.append(req)
        cb = self.on_ready
        if cb is not None:
            cb(self)

    # -- cycle protocol

    def _begin(self):
        with self._lock:
            writes, self._pending_writes = self._pending_writes, []
            expect, self._pending_expect = self._pending_expect, set()
        self._cycle_writes = sorted(writes, key=lambda w: w[0])
        self._expected_probes = expect
        self._served = set()
        self._mailq = []
        self._probe_gen = None
        self._scan_edge = {a.qid: a.out_edge for a in self.active}
        if self.active:
            queries = [
                ScanQuery(a.qid, a.cfg["pred"], a.snapshot) for a in self.active
            ]
            self._scan_gen = self.store.shared_scan(queries, self.counters)
        else:
            self._scan_gen = None

    def _cycle_trivial(self):
        return not (self.active or self._cycle_writes or self._expected_probes)

    def _work(self):
        progress = False
        if self._cycle_writes:
            for ts, op, cb in self._cycle_writes:
                try:
                    affected = self.store.apply_write(op, ts)
                except EngineError as exc:
                    if cb is None:
                        raise
                    cb(None, exc)
                else:
                    if cb is not None:
                        cb(affected, None)
            self._cycle_writes = ()
            progress = True
        if self._scan_gen is not None:
            progress = self._run_scan() or progress
        progress = self._serve_probes() or progress
        if (
            not self.cycle_done
            and not self._cycle_writes
            and self._scan_gen is None
            and not self._mailq
            and self._served >= self._expected_probes
        ):
            self._flush_all()
            self._close_cycle()
            progress = True
        return progress

    def _run_scan(self):
        progress = False
        while not self._outputs_full():
            try:
                item = next(self._scan_gen)
            except StopIteration:
                self._scan_gen = None
                return True
            progress = True
            if isinstance(item, EndOfStream):
                eid = self._scan_edge[item.qid]
                self._flush(eid)
                self.out_edges[eid].push(item)
            else:
                for eid, qids in self._out_active.items():
                    qs = qs_intersect(item.queries, qids)
                    if qs:
                        self._buffer_out(eid, SharedTuple(item.values, qs, item.row_id))
        return progress

    def _serve_probes(self):
        with self._lock:
            if self._mail:
                self._mailq.extend(self._mail)
                self._mail = []
        progress = False
        while self._mailq:
            req = self._mailq[0]
            if req.sender not in self._expected_probes or req.sender in self._served:
                raise ProtocolError(
                    f"unexpected probe batch from node {req.sender} at {self.table}",
                    self.cycle_no,
                )
            out = self.out_edges[req.res_edge]
            if self._probe_gen is None:
                self._probe_gen = self.store.shared_index_probe(
                    req.attr, req.probes, self.counters
                )
            while not out.full():
                try:
                    item = next(self._probe_gen)
                except StopIteration:
                    self._probe_gen = None
                    break
                progress = True
                if isinstance(item, EndOfStream):
                    self._flush(req.res_edge)
                    out.push(item)
                else:
                    self._buffer_out(req.res_edge, item)
            if self._probe_gen is not None:
                return progress  # channel saturated; resume on a later step
            covered = {p.qid for p in req.probes}
            self._flush(req.res_edge)
            for q in req.qids:
                if q not in covered:
                    out.push(EndOfStream(q))
            self._served.add(req.sender)
            self._mailq.pop(0)
            progress = True
        return progress


class _BuildingJoinNode(Node):
    """Shared scaffolding for joins that build a table from one edge and
    stream the other side(s) against it.

    Probe vectors arriving before the build side finished are stashed;
    the moment the last build marker lands they replay in order, and
    everything after streams straight through.
    """

    def wire(self, nodes):
        self._build_eid = self.config["build_edge"]
        self._build_key_idx = self.config["build_key_idx"]

    def _begin(self):
        self._collect_lanes()
        self._stash = []
        all_q = {a.qid for a in self.active}
        self._build_done = not all_q
        if all_q:
            # every sharer's path feeds (and closes) the build stream
            self._expected.setdefault(self._build_eid, set()).update(all_q)
            self._edge_active.setdefault(self._build_eid, set()).update(all_q)
        self._reset_build()

    def _reset_build(self):
        raise NotImplementedError

    def _note_eos(self, eid, qid):
        super()._note_eos(eid, qid)
        if not self._build_done and eid == self._build_eid and self._edge_done(eid):
            self._build_done = True
            stash, self._stash = self._stash, []
            for e, t in stash:
                self._probe(e, t)

    def _on_tuple(self, eid, t):
        if eid == self._build_eid:
            self._insert(t)
            return
        if not self._build_done:
            self._stash.append((eid, t))
            return
        self._probe(eid, t)

    def _insert(self, t):
        raise NotImplementedError

    def _probe(self, eid, t):
        raise NotImplementedError

    def _emit_pair(self, out_eid, probe_t, build_t, tags, build_first):
        if build_first:
            values = build_t.values + probe_t.values
            rid = rid_key(build_t.row_id) + rid_key(probe_t.row_id)
        else:
            values = probe_t.values + build_t.values
            rid = rid_key(probe_t.row_id) + rid_key(build_t.row_id)
        self._emit(out_eid, SharedTuple(values, tags, rid))


class HashJoinNode(_BuildingJoinNode):
    """Equi-join on data keys over the union of all sharers' inputs."""

    kind = "hashjoin"

    def _reset_build(self):
        self._table = {}

    def _insert(self, t):
        self.counters.builds += 1
        key = t.values[self._build_key_idx]
        if key is None:
            return  # null never joins
        bucket = self._table.get(key)
        if bucket is None:
            bucket = self._table[key] = []
        bucket.append(t)

    def _probe(self, eid, t):
        self.counters.probes += 1
        lanes = self._lanes_by_in.get(eid)
        if not lanes:
            return
        key = t.values[lanes[0][0]["probe_key_idx"]]
        if key is None:
            return
        matches = self._table.get(key)
        if not matches:
            return
        for lane, qids in lanes:
            qs1 = qs_intersect(t.queries, qids)
            if not qs1:
                continue
            out = lane["out"]
            build_first = lane["build_first"]
            for b in matches:
                tags = join_tags(qs1, b.queries)
                if tags:
                    self._emit_pair(out, t, b, tags, build_first)


class QidJoinNode(_BuildingJoinNode):
    """Join keyed on query membership first, data equality as residual.

    The build side maps each query id to its (few) relevant rows; a
    streaming tuple probes per member id and outputs for one matched
    pair coalesce into a single tagged tuple.
    """

    kind = "qidjoin"

    def _reset_build(self):
        self._by_qid = {}
        self._build_rows = []

    def _insert(self, t):
        self.counters.builds += 1
        i = len(self._build_rows)
        self._build_rows.append(t)
        for q in t.queries:
            self._by_qid.setdefault(q, []).append(i)

    def _probe(self, eid, t):
        self.counters.probes += 1
        lanes = self._lanes_by_in.get(eid)
        if not lanes:
            return
        pkey = t.values[lanes[0][0]["probe_key_idx"]]
        if pkey is None:
            return
        for lane, qids in lanes:
            qs1 = qs_intersect(t.queries, qids)
            if not qs1:
                continue
            matched = {}  # build row index -> tags, in first-probe order
            for q in qs1:
                for i in self._by_qid.get(q, ()):
                    if i in matched:
                        continue
                    b = self._build_rows[i]
                    if b.values[self._build_key_idx] != pkey:
                        continue
                    tags = join_tags(qs1, b.queries)
                    if tags:
                        matched[i] = tags
            out = lane["out"]
            build_first = lane["build_first"]
            for i, tags in matched.items():
                self._emit_pair(out, t, self._build_rows[i], tags, build_first)


class IndexJoinNode(Node):
    """Point join: buffers the outer side, then asks the indexed table
    for one batched look-up pass (distinct keys probed once) and joins
    the streamed-back matches.
    """

    kind = "inljoin"

    def wire(self, nodes):
        self._res_eid = self.config["probe_res"]
        self._key_attr = self.config["key_attr"]
        res_edge = self.in_edges[self._res_eid]
        self.table_node = nodes[res_edge.src]
        self._inner_key_idx = list(res_edge.schema).index(
            (self.config["table"], self._key_attr)
        )

    def _begin(self):
        self._collect_lanes()
        self._outer = {eid: [] for eid in self._lanes_by_in}
        self._match = {}
        self._requested = False
        all_q = {a.qid for a in self.active}
        if all_q:
            self._expected.setdefault(self._res_eid, set()).update(all_q)
            self._edge_active.setdefault(self._res_eid, set()).update(all_q)

    def _on_tuple(self, eid, t):
        if eid == self._res_eid:
            key = t.values[self._inner_key_idx]
            for out, o, qs1 in self._match.get(key, ()):
                tags = join_tags(qs1, t.queries)
                if tags:
                    self._emit(
                        out,
                        SharedTuple(
                            o.values + t.values,
                            tags,
                            rid_key(o.row_id) + rid_key(t.row_id),
                        ),
                    )
        else:
            self._outer[eid].append(t)

    def _note_eos(self, eid, qid):
        super()._note_eos(eid, qid)
        if not self._requested and all(
            self._edge_done(e) for e in self._outer
        ):
            self._send_request()

    def _send_request(self):
        acts = {a.qid: a for a in self.active}
        probes = {}
        for eid in sorted(self._outer):
            lanes = self._lanes_by_in[eid]
            for t in self._outer[eid]:
                for lane, qids in lanes:
                    qs1 = qs_intersect(t.queries, qids)
                    if not qs1:
                        continue
                    key = t.values[lane["probe_key_idx"]]
                    if key is None:
                        continue  # null never joins
                    self._match.setdefault(key, []).append((lane["out"], t, qs1))
                    for q in qs1:
                        if (q, key) not in probes:
                            a = acts[q]
                            probes[(q, key)] = ProbeQuery(
                                q, key, a.snapshot, a.cfg.get("inner_pred")
                            )
        self.counters.probes += len(self._match)
        self._requested = True
        self.table_node.request_probes(
            ProbeRequest(
                self.node_id,
                self._res_eid,
                self._key_attr,
                list(probes.values()),
                tuple(sorted(acts)),
            )
        )


class SortNode(Node):
    """Blocking sort: one comparison sort over the union of all inputs,
    then per-lane emission in global order with per-query Top-N cutoffs
    applied on the way out.
    """

    kind = "sort"

    def wire(self, nodes):
        self.desc = self.config["desc"]
        self._key_idx = {l["in"]: l["key_idx"] for l in self.config.get("lanes", ())}

    def _begin(self):
        self._collect_lanes()
        self._buffer = {eid: [] for eid in self._lanes_by_in}
        self._limits = {}
        for a in self.active:
            lim = a.cfg.get("limit")
            if lim is not None and lim <= 0:
                raise ProtocolError(
                    f"query {a.qid} activated sort with non-positive limit {lim}",
                    self.cycle_no,
                )
            self._limits[(a.in_edge, a.out_edge, a.qid)] = lim

    def _on_tuple(self, eid, t):
        self._buffer[eid].append(t)

    def _finalize(self):
        ranked = []
        edge_rank = {eid: i for i, eid in enumerate(sorted(self._buffer))}
        for eid in sorted(self._buffer):
            key_idx = self._key_idx[eid]
            rank = edge_rank[eid]
            for t in self._buffer[eid]:
                okey = OrderKey(
                    t.values[key_idx],
                    (rank,) + rid_key(t.row_id),
                    self.desc,
                    self.counters,
                )
                ranked.append((okey, eid, t))
        ranked.sort(key=lambda e: e[0])
        emitted = {}
        for _, eid, t in ranked:
            for lane, qids in self._lanes_by_in[eid]:
                qs1 = qs_intersect(t.queries, qids)
                if not qs1:
                    continue
                out = lane["out"]
                allowed = []
                for q in qs1:
                    slot = (eid, out, q)
                    lim = self._limits[slot]
                    if lim is None:
                        allowed.append(q)
                        continue
                    n = emitted.get(slot, 0)
                    if n < lim:
                        emitted[slot] = n + 1
                        allowed.append(q)
                if allowed:
                    self._emit(out, SharedTuple(t.values, tuple(allowed), t.row_id))


class GroupByNode(Node):
    """Two-phase grouping: one hash pass clusters the union by key while
    per-(group, query) accumulators grow; the close-out phase finalizes
    aggregates, applies each query's HAVING, and emits per query in
    (query id, group key) order.
    """

    kind = "groupby"

    def wire(self, nodes):
        self.keys = tuple(self.config["keys"])
        self.agg_slots = tuple(tuple(s) for s in self.config.get("agg_slots", ()))
        self._funcs = tuple(f for f, _ in self.agg_slots)
        self._slot_pos = {s: i for i, s in enumerate(self.agg_slots)}
        self._key_idxs = {
            l["in"]: tuple(l["key_idxs"]) for l in self.config.get("lanes", ())
        }
        self._slot_args = {}
        for eid, edge in self.in_edges.items():
            cols = list(edge.schema)
            args = []
            for _, lin in self.agg_slots:
                if lin is None:
                    args.append(-1)  # count rows, no argument column
                elif lin in cols:
                    args.append(cols.index(lin))
                else:
                    args.append(None)  # foreign sharer's column; never fed here
            self._slot_args[eid] = tuple(args)

    def _begin(self):
        self._collect_lanes()
        self._groups = {}
        self._qcfg = {a.qid: a.cfg for a in self.active}

    def _on_tuple(self, eid, t):
        key = tuple(t.values[i] for i in self._key_idxs[eid])
        args = self._slot_args[eid]
        funcs = self._funcs
        grp = self._groups.get(key)
        if grp is None:
            grp = self._groups[key] = {}
        for q in t.queries:
            states = grp.get(q)
            if states is None:
                states = grp[q] = [
                    0 if f == "COUNT" else None for f in funcs
                ]
            for si, arg in enumerate(args):
                if arg is None:
                    continue
                func = funcs[si]
                if arg == -1:
                    states[si] += 1
                    continue
                v = t.values[arg]
                if v is None:
                    continue  # nulls never contribute
                if func == "COUNT":
                    states[si] += 1
                elif func == "SUM":
                    states[si] = v if states[si] is None else states[si] + v
                elif func == "MIN":
                    if states[si] is None or v < states[si]:
                        states[si] = v
                elif func == "MAX":
                    if states[si] is None or v > states[si]:
                        states[si] = v
                else:  # AVG rides as a mergeable (sum, count) pair
                    pair = states[si]
                    if pair is None:
                        states[si] = [v, 1]
                    else:
                        pair[0] += v
                        pair[1] += 1

    def _final_value(self, func, state):
        if func == "COUNT":
            return state
        if func == "AVG":
            return None if state is None else state[0] / state[1]
        return state

    def _finalize(self):
        self.counters.groups += len(self._groups)
        emissions = []
        for lanes in self._lanes_by_in.values():
            for lane, qids in lanes:
                for q in qids:
                    emissions.append((q, lane["out"]))
        emissions.sort(key=lambda e: e[0])
        for q, out in emissions:
            cfg = self._qcfg[q]
            positions = [self._slot_pos[a] for a in cfg["aggs"]]
            rows = []
            for key, grp in self._groups.items():
                states = grp.get(q)
                if states is None:
                    continue  # query contributed nothing to this group
                if not self._having_ok(cfg["having"], key, states):
                    continue
                row = key + tuple(
                    self._final_value(self._funcs[i], states[i]) for i in positions
                )
                rows.append((null_safe_key(key), row))
            rows.sort(key=lambda kr: kr[0])
            for nsk, row in rows:
                self._emit(out, SharedTuple(row, (q,), nsk))

    def _having_ok(self, having, key, states):
        for term, op, operand in having:
            if term[0] == "key":
                v = key[self.keys.index(term[1])]
            else:
                i = self._slot_pos[(term[1], term[2])]
                v = self._final_value(self._funcs[i], states[i])
            if not _make_test(op, operand)(v):
                return False
        return True


class FilterNode(Node):
    """Streaming per-query predicate over a shared stream.

    The planner pushes all filters into table scans, so no statement of
    the supported dialect routes through this node; it completes the
    operator set for hand-built plans and embedders.
    """

    kind = "filter"

    def _begin(self):
        self._collect_lanes()
        self._qpred = {a.qid: a.cfg["pred"] for a in self.active}

    def _on_tuple(self, eid, t):
        for lane, qids in self._lanes_by_in[eid]:
            qs1 = qs_intersect(t.queries, qids)
            if not qs1:
                continue
            members = tuple(q for q in qs1 if self._qpred[q].eval(t.values))
            if members:
                self._emit(lane["out"], SharedTuple(t.values, members, t.row_id))


class OutputNode(Node):
    """Terminal router: expands each tuple to every member query,
    applies that query's projection, and hands rows to the sink in
    stream order.  Stream close-out completes the query's envelope.
    """

    kind = "output"

    def __init__(self, plan_node, vector_size=VECTOR_SIZE):
        super().__init__(plan_node, vector_size)
        self.sink = None

    def _begin(self):
        self._proj = {a.qid: a.cfg["projection"] for a in self.active}

    def _on_tuple(self, eid, t):
        sink = self.sink
        for q in t.queries:
            proj = self._proj.get(q)
            if proj is None:
                raise ProtocolError(
                    f"result delivery for unknown query q{q}", self.cycle_no
                )
            sink.deliver(q, tuple(t.values[i] for i in proj))
        self.counters.tuples_out += 1

    def _note_eos(self, eid, qid):
        super()._note_eos(eid, qid)
        self.sink.complete(qid)


_NODE_TYPES = {
    "hashjoin": HashJoinNode,
    "qidjoin": QidJoinNode,
    "inljoin": IndexJoinNode,
    "sort": SortNode,
    "groupby": GroupByNode,
    "filter": FilterNode,
    "output": OutputNode,
}


def wire_graph(plan, stores, sink=None, vector_size=VECTOR_SIZE, edge_capacity=EDGE_CAPACITY):
    """Instantiate runtime nodes and channels for a merged plan.

    stores maps table name -> TableStore.  Returns (nodes, edges, sink)
    with nodes/edges keyed by their plan ids.  Node configuration is
    frozen here: statements registered after wiring need a new graph.
    """
    if sink is None:
        sink = CollectingSink()
    nodes = {}
    for pn in plan.nodes:
        if pn.kind == "access":
            nodes[pn.node_id] = TableNode(pn, stores[pn.config["table"]], vector_size)
        else:
            nodes[pn.node_id] = _NODE_TYPES[pn.kind](pn, vector_size)
    edges = {}
    for pe in plan.edges:
        e = Edge.for_plan_edge(pe, capacity=edge_capacity)
        edges[pe.edge_id] = e
        nodes[pe.src].out_edges[pe.edge_id] = e
        nodes[pe.dst].in_edges[pe.edge_id] = e
    for node in nodes.values():
        node.wire(nodes)
        if node.kind == "output":
            node.sink = sink
    return nodes, edges, sink


def activate_path(nodes, plan, path):
    """Queue one bound query's activations (taking effect next cycle)."""
    for step in path.template.steps:
        node = nodes[step.node_id]
        node.queue_activation(
            Activation(
                path.qid, path.snapshot, step.in_edge, step.out_edge,
                path.bound[step.node_id],
            )
        )
        plan_node = plan.node(step.node_id)
        if plan_node.kind == "inljoin":
            res = plan.edge(plan_node.config["probe_res"])
            nodes[res.src].expect_probes(step.node_id)


def run_cycle(node, cycle_no=0):
    """Drive a single node through one cycle; input must be pre-queued."""
    node.begin_cycle(cycle_no)
    while not node.cycle_done:
        if not node.step():
            break
    return node.cycle_done


def drive_cycle(nodes, cycle_no=0):
    """Run one synchronous cycle over a set of wired nodes to quiescence."""
    nodes = list(nodes)
    for n in nodes:
        n.begin_cycle(cycle_no)
    while True:
        progress = False
        done = True
        for n in nodes:
            if not n.cycle_done:
                done = False
                if n.step():
                    progress = True
        if done:
            return
        if not progress:
            stuck = [n.node_id for n in nodes if not n.cycle_done]
            raise ProtocolError(f"cycle stalled at nodes {stuck}", cycle_no)
