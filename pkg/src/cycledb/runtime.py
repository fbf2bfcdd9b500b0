"""Always-on batched engine: admission, heartbeat cycles, result envelopes.

One monotone counter stamps every admitted operation; whatever arrives
while a cycle runs forms the next batch, and each heartbeat pushes the
whole pending batch through the wired operator graph at once. Statement
routing freezes when the engine starts; reads registered later still
run, one at a time, through the logical interpreter at batch
boundaries, so the graph never changes mid-flight.

Thread model: every operator node is owned by exactly one worker
thread, which is the only thread ever stepping it. Edges wake the
owning worker of their consumer on push and of their producer on drain
(resuming paused scans). The coordinator thread assembles batches,
begins cycles, and collects results; with manual=True there are no
threads at all and the caller pumps step_batch().
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass

from cycledb.baseline import LogicalExecutor, ResultEnvelope
from cycledb.errors import EngineError, ProtocolError
from cycledb.instrument import Counters
from cycledb.operators import activate_path, drive_cycle, wire_graph
from cycledb.planner import GlobalPlan
from cycledb.sqlfront import PreparedStatement, bind, parse_catalog, prepare_sql
from cycledb.storage import load_table


@dataclass
class EngineConfig:
    vector_size: int = 1024
    edge_capacity: int = 128
    workers: int = 0  # 0: one per CPU, capped by operator-node count
    manual: bool = False  # no threads; the caller pumps step_batch()
    idle_tick_s: float = 0.05  # heartbeat period when nothing is pending
    gc: bool = True  # collect dead versions after every cycle
    batch_timeout_s: float = 60.0
    batch_cap: int = 0  # 0: unbounded; else overflow spills to the next cycle


class _Worker:
    __slots__ = ("index", "nodes", "kick", "thread")

    def __init__(self, index):
        self.index = index
        self.nodes = []
        self.kick = threading.Event()
        self.thread = None


class Engine:
    """Batched shared-execution engine over in-memory versioned tables."""

    def __init__(self, catalog, data=None, stats=None, config=None):
        if isinstance(catalog, str):
            catalog = parse_catalog(catalog)
        self.catalog = dict(catalog)
        self.config = config or EngineConfig()
        data = data or {}
        self.stores = {
            name: load_table(schema, data.get(name, []))
            for name, schema in self.catalog.items()
        }
        self.plan = GlobalPlan(self.catalog, stats)
        self.nodes = {}
        self.edges = {}
        self.sink = None
        self._executor = LogicalExecutor(self.catalog, self.stores, stats)
        self._adhoc = {}  # statement_id -> prepared (reads registered after start)
        self._methods = {}  # statement_id -> forced join method for ad-hoc runs
        self._lock = threading.Lock()
        self._admit_cv = threading.Condition(self._lock)
        self._pending = []  # (tag, instance), admission order
        self._res_lock = threading.Lock()
        self._res_cv = threading.Condition(self._res_lock)
        self._results = {}
        self._submitted = {}
        self._admitted = 0
        self._cycle_no = 0
        self._batches = 0  # cycles that carried at least one operation
        self._batch_wall = []
        self._adhoc_counters = Counters()
        self._started = False
        self._stopping = False
        self._fault = None
        self._node_list = []
        self._table_nodes = {}
        self._workers = []
        self._coordinator = None
        self._phase = "idle"
        self._done_cv = threading.Condition()
        self._prepared_by_id = {}

    @classmethod
    def open(cls, catalog, data_dir=None, stats=None, config=None):
        """Engine over CSV files: one <table>.csv per table under data_dir.

        catalog may be DDL text or a path to a DDL file. Tables without
        a CSV start empty.
        """
        if isinstance(catalog, str) and "\n" not in catalog and os.path.isfile(catalog):
            with open(catalog, encoding="utf-8") as fh:
                catalog = fh.read()
        engine = cls(catalog, stats=stats, config=config)
        if data_dir is not None:
            from cycledb.storage import load_csv

            for name, schema in engine.catalog.items():
                path = os.path.join(data_dir, f"{name.lower()}.csv")
                if os.path.exists(path):
                    engine.stores[name] = load_csv(schema, path)
        return engine

    # -- statements -----------------------------------------------------------------

    def register(self, statement, join_method=None):
        """Register a statement (SQL text or prepared) for later admission.

        Reads registered before start() merge into the shared graph;
        reads registered on a live engine run one at a time at batch
        boundaries. Writes register at any time.
        """
        prepared = (
            statement
            if isinstance(statement, PreparedStatement)
            else prepare_sql(statement, self.catalog)
        )
        with self._lock:
            if prepared.is_read() and self._started:
                self._adhoc[prepared.statement_id] = prepared
                self._methods[prepared.statement_id] = join_method
            else:
                self.plan.register(prepared, join_method=join_method)
            self._prepared_by_id[prepared.statement_id] = prepared
        return prepared

    def start(self):
        with self._lock:
            if self._started:
                raise EngineError("engine already started")
            self.plan.check_acyclic()
            self.nodes, self.edges, self.sink = wire_graph(
                self.plan,
                self.stores,
                vector_size=self.config.vector_size,
                edge_capacity=self.config.edge_capacity,
            )
            self._node_list = list(self.nodes.values())
            self._table_nodes = {
                n.table: n for n in self._node_list if n.kind == "access"
            }
            self._started = True
        if not self.config.manual:
            self._spawn_threads()
        return self

    def __enter__(self):
        return self if self._started else self.start()

    def __exit__(self, *exc):
        self.shutdown()

    # -- admission ------------------------------------------------------------------

    def admit(self, prepared, params=()):
        """Queue one operation; returns its qid (== admission timestamp).

        Accepts either a prepared statement or its integer id.
        """
        with self._lock:
            if self._stopping:
                raise EngineError("engine is shut down")
            if isinstance(prepared, int):
                try:
                    prepared = self._prepared_by_id[prepared]
                except KeyError:
                    raise EngineError(
                        f"statement {prepared} was never registered"
                    ) from None
            sid = prepared.statement_id
            if prepared.is_read():
                if sid in self.plan.templates:
                    tag = "read"
                elif sid in self._adhoc:
                    tag = "adhoc"
                else:
                    raise EngineError(f"statement {sid} was never registered")
            else:
                if sid not in self.plan.templates:
                    raise EngineError(f"statement {sid} was never registered")
                tag = "write"
            self._admitted += 1
            qid = self._admitted
            inst = bind(prepared, params, qid, qid)
            self._pending.append((tag, inst))
            self._admit_cv.notify_all()
        with self._res_lock:
            self._submitted[qid] = time.monotonic()
        return qid

    def poll(self, qid):
        with self._res_lock:
            return self._results.get(qid)

    def wait(self, qid, timeout=30.0):
        deadline = time.monotonic() + timeout
        with self._res_cv:
            while qid not in self._results:
                if self._fault is not None:
                    raise self._fault
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise EngineError(f"timed out waiting on q{qid}")
                self._res_cv.wait(min(remaining, 0.05))
            return self._results[qid]

    # -- batch execution -------------------------------------------------------------

    def step_batch(self):
        """Manual mode: run one cycle over everything pending.

        Returns the number of operations the cycle carried (0 is an
        idle tick: the cycle still runs, and storage still collects).
        """
        if not self._started:
            raise EngineError("start() the engine first")
        if not self.config.manual:
            raise EngineError("step_batch() only drives a manual-mode engine")
        if self._fault is not None:
            raise self._fault
        return self._run_batch(threaded=False)

    def _publish(self, qid, kind, rows=None, affected=None, error=None):
        with self._res_cv:
            if qid in self._results:
                raise ProtocolError(f"duplicate result for q{qid}", self._cycle_no)
            self._results[qid] = ResultEnvelope(
                qid,
                kind,
                rows=rows,
                affected=affected,
                error=error,
                cycle=self._cycle_no,
                submitted_at=self._submitted.pop(qid, 0.0),
                finished_at=time.monotonic(),
            )
            self._res_cv.notify_all()

    def _write_done(self, inst):
        def callback(affected, exc):
            if exc is not None:
                self._publish(inst.qid, "write", error=str(exc))
            else:
                self._publish(inst.qid, "write", affected=affected)

        return callback

    def _run_batch(self, threaded):
        with self._lock:
            cap = self.config.batch_cap
            if cap and len(self._pending) > cap:
                # overflow spills to the next cycle in arrival order
                ops, self._pending = self._pending[:cap], self._pending[cap:]
            else:
                ops, self._pending = self._pending, []
        cycle = self._cycle_no
        t0 = time.perf_counter()
        reads = []
        adhoc = []
        for tag, inst in ops:
            if tag == "write":
                op = self.plan.build_write_op(inst)
                node = self._table_nodes.get(op.table)
                if node is not None:
                    node.queue_write(inst.arrival, op, self._write_done(inst))
                else:
                    # table outside the wired graph: apply at the boundary
                    try:
                        n = self.stores[op.table].apply_write(op, inst.arrival)
                    except EngineError as exc:
                        self._publish(inst.qid, "write", error=str(exc))
                    else:
                        self._publish(inst.qid, "write", affected=n)
            elif tag == "read":
                activate_path(self.nodes, self.plan, self.plan.assign_path(inst))
                reads.append(inst)
            else:
                adhoc.append(inst)

        if threaded:
            self._drive_threaded(cycle)
        else:
            drive_cycle(self._node_list, cycle)

        completions = list(self.sink.completed)
        self.sink.completed.clear()
        expected = sorted(i.qid for i in reads)
        if sorted(completions) != expected or len(completions) != len(set(completions)):
            raise ProtocolError(
                f"completions {sorted(completions)} != activations {expected}", cycle
            )
        for inst in reads:
            self._publish(inst.qid, "read", rows=self.sink.rows.pop(inst.qid, []))
        for edge in self.edges.values():
            left = edge.pending()
            if left:
                raise ProtocolError(
                    f"edge e{edge.edge_id} left {left} vectors queued", cycle
                )
        # late-registered reads run now, before old versions are collected
        for inst in adhoc:
            method = self._methods.get(inst.prepared.statement_id)
            try:
                rows = self._executor.execute(inst, self._adhoc_counters, method)
            except EngineError as exc:
                self._publish(inst.qid, "read", error=str(exc))
            else:
                self._publish(inst.qid, "read", rows=rows)
        if self.config.gc:
            for store in self.stores.values():
                store.gc()
        self._cycle_no += 1
        if ops:
            self._batches += 1
            self._batch_wall.append(time.perf_counter() - t0)
        return len(ops)

    # -- threads ----------------------------------------------------------------------

    def _spawn_threads(self):
        count = self.config.workers or (os.cpu_count() or 2)
        count = max(1, min(count, len(self._node_list)))
        self._workers = [_Worker(i) for i in range(count)]
        owner = {}
        for i, node in enumerate(self._node_list):
            worker = self._workers[i % count]
            worker.nodes.append(node)
            owner[node.node_id] = worker

        def waker(worker):
            return lambda _source: worker.kick.set()

        for node in self._node_list:
            node.on_ready = waker(owner[node.node_id])
        for edge in self.edges.values():
            if edge.dst in owner:
                edge.on_push = waker(owner[edge.dst])
            if edge.src in owner:
                edge.on_drain = waker(owner[edge.src])
        for worker in self._workers:
            worker.thread = threading.Thread(
                target=self._worker_loop,
                args=(worker,),
                name=f"engine-w{worker.index}",
                daemon=True,
            )
            worker.thread.start()
        self._coordinator = threading.Thread(
            target=self._coordinate, name="engine-heartbeat", daemon=True
        )
        self._coordinator.start()

    def _worker_loop(self, worker):
        while not self._stopping:
            worker.kick.wait(timeout=0.05)
            worker.kick.clear()
            if self._phase != "running":
                continue
            try:
                progress = True
                while progress and self._phase == "running":
                    progress = False
                    for node in worker.nodes:
                        if not node.cycle_done and node.step():
                            progress = True
            except EngineError as exc:
                self._fault = exc
            with self._done_cv:
                self._done_cv.notify_all()

    def _drive_threaded(self, cycle):
        for node in self._node_list:
            node.begin_cycle(cycle)
        self._phase = "running"
        for worker in self._workers:
            worker.kick.set()
        deadline = time.monotonic() + self.config.batch_timeout_s
        try:
            with self._done_cv:
                while not all(n.cycle_done for n in self._node_list):
                    if self._fault is not None:
                        raise self._fault
                    if time.monotonic() > deadline:
                        stuck = [n.node_id for n in self._node_list if not n.cycle_done]
                        raise ProtocolError(f"cycle stalled at nodes {stuck}", cycle)
                    self._done_cv.wait(0.02)
        finally:
            self._phase = "idle"

    def _coordinate(self):
        while True:
            with self._lock:
                if not self._pending and not self._stopping:
                    self._admit_cv.wait(self.config.idle_tick_s)
                if self._stopping and not self._pending:
                    break
            try:
                self._run_batch(threaded=True)
            except EngineError as exc:
                self._fault = exc
                with self._res_cv:
                    self._res_cv.notify_all()
                break
        self._phase = "stopped"

    # -- lifecycle and introspection ----------------------------------------------------

    def shutdown(self):
        """Stop accepting work, drain pending batches, join all threads."""
        with self._lock:
            self._stopping = True
            self._admit_cv.notify_all()
        if self._coordinator is not None:
            self._coordinator.join(timeout=self.config.batch_timeout_s)
        for worker in self._workers:
            worker.kick.set()
        for worker in self._workers:
            if worker.thread is not None:
                worker.thread.join(timeout=10.0)

    def metrics(self):
        """Advisory snapshot of engine totals and per-node counters."""
        nodes = {}
        for node in self._node_list:
            entry = {
                "kind": node.kind,
                "identity": node.identity,
                "cycles": node.cycles,
                "last_active": node.last_active,
            }
            entry.update(node.counters.as_dict())
            nodes[node.node_id] = entry
        with self._res_lock:
            completed = len(self._results)
        return {
            "admitted": self._admitted,
            "completed": completed,
            "batches": self._batches,
            "cycles": self._cycle_no,
            "batch_wall_s": tuple(self._batch_wall),
            "adhoc": self._adhoc_counters.as_dict(),
            "nodes": nodes,
            "versions": {t: s.version_count() for t, s in self.stores.items()},
        }


def open_engine(catalog, data=None, data_dir=None, stats=None, config=None):
    """Started engine, ready for use as a context manager.

    catalog is DDL text or a path to a DDL file; tables load from data
    (rows per table) or from <table>.csv files under data_dir.
    """
    if data_dir is not None:
        engine = Engine.open(catalog, data_dir=data_dir, stats=stats, config=config)
    else:
        engine = Engine(catalog, data=data, stats=stats, config=config)
    return engine.start()
