"""Workload driver, metrics reports, report comparison, and verification.

run() drives one configured workload against either executor and
returns a MetricsReport. compare() lines two reports up side by side.
verify() checks the batched engine against one-at-a-time replay on the
same operation stream and reports the first divergence with a repro
small enough to paste into a test.

Open-loop runs admit from a single thread, so the seed determines the
admission order and therefore (batching aside) every result. Closed-loop
clients each draw from their own seeded stream; the global interleaving
of clients is timing-dependent by nature.
"""

from __future__ import annotations

import contextlib
import csv
import datetime
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field

import cycledb.operators as operators
from cycledb.baseline import BaselineEngine, SerialReplayer
from cycledb.errors import ConfigError, EngineError
from cycledb.planner import PlanNode
from cycledb.runtime import Engine, EngineConfig
from cycledb.sqlfront import parse_catalog, prepare_sql

from cycledb.bench.datagen import ensure_dataset

# -- metrics --------------------------------------------------------------------------


def nearest_rank(sorted_values, pct):
    """Nearest-rank percentile; monotone in pct by construction."""
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


@dataclass
class StatementMetrics:
    name: str
    issued: int = 0
    successful: int = 0  # completed within the response-time limit
    over_limit: int = 0  # completed late
    in_flight: int = 0  # unresolved when measurement ended
    completed: int = 0
    throughput_ops_s: float = 0.0
    p50_ms: float = 0.0
    p95_ms: float = 0.0
    p99_ms: float = 0.0
    max_ms: float = 0.0

    FIELDS = (
        "statement", "issued", "successful", "over_limit", "in_flight",
        "completed", "throughput_ops_s", "p50_ms", "p95_ms", "p99_ms", "max_ms",
    )

    def row(self):
        # str(float) is the shortest exact form, so reports re-load bit-identical
        return [
            self.name, self.issued, self.successful, self.over_limit,
            self.in_flight, self.completed,
            str(self.throughput_ops_s), str(self.p50_ms),
            str(self.p95_ms), str(self.p99_ms), str(self.max_ms),
        ]

    @classmethod
    def from_row(cls, row):
        name, issued, ok, over, inflight, completed = row[0], *map(int, row[1:6])
        thr, p50, p95, p99, mx = map(float, row[6:11])
        return cls(name, issued, ok, over, inflight, completed,
                   thr, p50, p95, p99, mx)

    @classmethod
    def from_latencies(cls, name, issued, latencies_ms, limit_ms, wall_s):
        """latencies_ms: one entry per completed operation."""
        lat = sorted(latencies_ms)
        ok = sum(1 for v in lat if v <= limit_ms)
        m = cls(
            name=name,
            issued=issued,
            successful=ok,
            over_limit=len(lat) - ok,
            in_flight=issued - len(lat),
            completed=len(lat),
            throughput_ops_s=len(lat) / wall_s if wall_s > 0 else 0.0,
        )
        m.p50_ms = nearest_rank(lat, 50)
        m.p95_ms = nearest_rank(lat, 95)
        m.p99_ms = nearest_rank(lat, 99)
        m.max_ms = lat[-1] if lat else 0.0
        return m


@dataclass
class MetricsReport:
    workload: str
    seed: int
    executor: str
    duration_s: float
    wall_s: float
    cycles: int = 0
    batches: int = 0
    mean_cycle_ms: float = 0.0
    statements: list = field(default_factory=list)  # StatementMetrics, by name
    nodes: dict = field(default_factory=dict)  # node label -> counter dict

    def statement(self, name):
        for s in self.statements:
            if s.name == name:
                return s
        raise KeyError(name)

    def totals(self):
        t = StatementMetrics("TOTAL")
        for s in self.statements:
            t.issued += s.issued
            t.successful += s.successful
            t.over_limit += s.over_limit
            t.in_flight += s.in_flight
            t.completed += s.completed
            t.throughput_ops_s += s.throughput_ops_s
        return t

    def check_conservation(self):
        for s in self.statements + [self.totals()]:
            if s.successful + s.over_limit + s.in_flight != s.issued:
                raise EngineError(
                    f"{s.name}: {s.successful}+{s.over_limit}+{s.in_flight}"
                    f" != issued {s.issued}"
                )
        return self

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            meta = (
                f"workload={self.workload}\tseed={self.seed}"
                f"\texecutor={self.executor}\tduration_s={self.duration_s}"
                f"\twall_s={self.wall_s:.6f}\tcycles={self.cycles}"
                f"\tbatches={self.batches}\tmean_cycle_ms={self.mean_cycle_ms:.6f}"
            )
            fh.write(f"# {meta}\n")
            writer = csv.writer(fh)
            writer.writerow(StatementMetrics.FIELDS)
            for s in self.statements:
                writer.writerow(s.row())
        return path

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            first = fh.readline()
            if not first.startswith("# "):
                raise ConfigError(f"{path}: missing metadata line")
            meta = dict(kv.split("=", 1) for kv in first[2:].strip().split("\t"))
            report = cls(
                workload=meta["workload"],
                seed=int(meta["seed"]),
                executor=meta["executor"],
                duration_s=float(meta["duration_s"]),
                wall_s=float(meta["wall_s"]),
                cycles=int(meta["cycles"]),
                batches=int(meta["batches"]),
                mean_cycle_ms=float(meta["mean_cycle_ms"]),
            )
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != StatementMetrics.FIELDS:
                raise ConfigError(f"{path}: unexpected header {header}")
            report.statements = [StatementMetrics.from_row(r) for r in reader]
        return report

    def summary(self):
        lines = [
            f"workload {self.workload}  seed={self.seed}  executor={self.executor}",
            f"wall {self.wall_s:.3f}s of {self.duration_s:.3f}s requested;"
            f" cycles={self.cycles} batches={self.batches}"
            f" mean_cycle={self.mean_cycle_ms:.3f}ms",
            "",
            f"{'statement':<18}{'issued':>8}{'ok':>8}{'late':>6}{'inflt':>6}"
            f"{'ops/s':>10}{'p50ms':>9}{'p95ms':>9}{'p99ms':>9}{'maxms':>9}",
        ]
        for s in self.statements + [self.totals()]:
            lines.append(
                f"{s.name:<18}{s.issued:>8}{s.successful:>8}{s.over_limit:>6}"
                f"{s.in_flight:>6}{s.throughput_ops_s:>10.1f}{s.p50_ms:>9.2f}"
                f"{s.p95_ms:>9.2f}{s.p99_ms:>9.2f}{s.max_ms:>9.2f}"
            )
        if self.nodes:
            lines += ["", "node counters:"]
            for label in sorted(self.nodes):
                counters = self.nodes[label]
                inner = " ".join(
                    f"{k}={v}" for k, v in counters.items() if v
                )
                lines.append(f"  {label}: {inner or 'idle'}")
        return "\n".join(lines)


# -- operation streams ------------------------------------------------------------


def op_stream(config, rng, seq_state=None):
    """Endless (spec, params) stream; (seed, draw index) determines each op."""
    seq_state = {} if seq_state is None else seq_state
    specs = config.statements
    bounds = []
    acc = 0.0
    for s in specs:
        acc += s.weight
        bounds.append(acc)
    while True:
        roll = rng.random()
        for spec, bound in zip(specs, bounds):
            if roll < bound or spec is specs[-1]:
                params = tuple(
                    p.draw(rng, seq_state, (spec.name, i))
                    for i, p in enumerate(spec.params)
                )
                yield spec, params
                break


def _prepare_all(config, catalog):
    return {s.name: prepare_sql(s.sql, catalog) for s in config.statements}


def _node_counters(engine):
    metrics = engine.metrics()
    out = {}
    for node_id, entry in metrics["nodes"].items():
        label = PlanNode(node_id, entry["kind"], entry["identity"]).label()
        counters = {
            k: v
            for k, v in entry.items()
            if k not in ("kind", "identity")
        }
        out[label] = counters
    return out, metrics


# -- run ------------------------------------------------------------------------------


def _open_engine(config, catalog, rows, stats):
    if config.executor == "shared":
        eng = Engine(
            catalog, data=rows, stats=stats,
            config=EngineConfig(**config.engine),
        )
        return eng
    workers = config.engine.get("workers", 0) or None
    return BaselineEngine(catalog, rows, stats, workers=workers)


def run(config, keep_results=False):
    """Drive one workload; returns a conservation-checked MetricsReport.

    keep_results additionally returns, per qid, the statement name, the
    bound parameters, and the envelope, for equivalence tests.
    """
    config.validate()
    catalog, rows, stats = ensure_dataset(config)
    prepared = _prepare_all(config, catalog)
    limits = {
        s.name: (s.limit_ms if s.limit_ms is not None
                 else config.response_time_limit_ms)
        for s in config.statements
    }
    engine = _open_engine(config, catalog, rows, stats)
    if config.executor == "shared":
        for spec in config.statements:
            engine.register(prepared[spec.name], join_method=spec.join_method)
    engine.start()

    issued = []  # (qid, statement name, params), admission order
    try:
        if config.rate > 0:
            _drive_open_loop(config, engine, prepared, issued)
        else:
            _drive_clients(config, engine, prepared, issued)

        grace = max(2.0, 3.0 * max(limits.values()) / 1000.0)
        deadline = time.monotonic() + grace
        pending = [q for q, _, _ in issued]
        while pending and time.monotonic() < deadline:
            pending = [q for q in pending if engine.poll(q) is None]
            if pending:
                time.sleep(0.005)

        wall = _measured_wall(config)
        by_stmt = {s.name: [] for s in config.statements}
        envelopes = {}
        for qid, name, _ in issued:
            envelope = engine.poll(qid)
            envelopes[qid] = envelope
            if envelope is not None:
                by_stmt[name].append(envelope.latency_s * 1000.0)
        counts = {name: 0 for name in by_stmt}
        for _, name, _ in issued:
            counts[name] += 1

        report = MetricsReport(
            workload=config.name,
            seed=config.seed,
            executor=config.executor,
            duration_s=config.duration_s,
            wall_s=wall,
        )
        for name in sorted(by_stmt):
            report.statements.append(
                StatementMetrics.from_latencies(
                    name, counts[name], by_stmt[name], limits[name], wall
                )
            )
        if config.executor == "shared":
            report.nodes, metrics = _node_counters(engine)
            report.cycles = metrics["cycles"]
            report.batches = metrics["batches"]
            walls = metrics["batch_wall_s"]
            if walls:
                report.mean_cycle_ms = 1000.0 * sum(walls) / len(walls)
        else:
            report.nodes = {"query-at-a-time": engine.totals.as_dict()}
        report.check_conservation()
    finally:
        engine.shutdown()
    if keep_results:
        results = {
            qid: (name, params, envelopes.get(qid))
            for qid, name, params in issued
        }
        return report, results
    return report


def _measured_wall(config):
    # measurement window == admission window; the drain grace only
    # resolves stragglers and must not dilute throughput
    return config.duration_s


def _drive_open_loop(config, engine, prepared, issued):
    rng = random.Random(config.seed)
    stream = op_stream(config, rng)
    gap_fixed = 1.0 / config.rate
    t0 = time.monotonic()
    next_at = t0
    deadline = t0 + config.duration_s
    while True:
        now = time.monotonic()
        if now >= deadline:
            break
        if now < next_at:
            time.sleep(min(next_at - now, 0.01))
            continue
        spec, params = next(stream)
        qid = engine.admit(prepared[spec.name], params)
        issued.append((qid, spec.name, params))
        if config.think_time[0] == "exp":
            next_at += rng.expovariate(config.rate)
        else:
            next_at += gap_fixed


def _drive_clients(config, engine, prepared, issued):
    lock = threading.Lock()
    seq_state = {}  # shared so unique-key draws never collide across clients
    deadline = time.monotonic() + config.duration_s
    kind, think_ms = config.think_time

    def client(index):
        rng = random.Random(config.seed * 10_007 + index)
        stream = op_stream(config, rng, seq_state)
        while time.monotonic() < deadline:
            with lock:
                spec, params = next(stream)
                qid = engine.admit(prepared[spec.name], params)
                issued.append((qid, spec.name, params))
            try:
                engine.wait(qid, timeout=max(1.0, config.duration_s))
            except EngineError:
                return
            if think_ms:
                pause = (
                    rng.expovariate(1000.0 / think_ms)
                    if kind == "exp"
                    else think_ms / 1000.0
                )
                if time.monotonic() + pause >= deadline:
                    return
                time.sleep(pause)

    threads = [
        threading.Thread(target=client, args=(i,), daemon=True)
        for i in range(config.clients)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=config.duration_s + 30.0)


# -- sweeps ---------------------------------------------------------------------------


def sweep(config, ks, statement=None):
    """Batch-size sweep: k copies of one statement as a single burst.

    Each point runs on a fresh engine. Shared executes the burst as one
    cycle; query-at-a-time replays it serially. Rows are named k=<k> so
    compare() can find the crossover.
    """
    config.validate()
    catalog, rows, stats = ensure_dataset(config)
    spec = (
        config.statements[0]
        if statement is None
        else next(s for s in config.statements if s.name == statement)
    )
    limit = (spec.limit_ms if spec.limit_ms is not None
             else config.response_time_limit_ms)
    report = MetricsReport(
        workload=f"{config.name}:sweep:{spec.name}",
        seed=config.seed,
        executor=config.executor,
        duration_s=0.0,
        wall_s=0.0,
    )
    for k in ks:
        rng = random.Random(config.seed * 31 + k)
        seq_state = {}
        draws = [
            tuple(p.draw(rng, seq_state, (spec.name, i))
                  for i, p in enumerate(spec.params))
            for _ in range(k)
        ]
        if config.executor == "shared":
            eng = Engine(
                catalog, data=rows, stats=stats,
                config=EngineConfig(manual=True, **config.engine),
            )
            p = eng.register(prepare_sql(spec.sql, catalog),
                             join_method=spec.join_method)
            eng.start()
            qids = [eng.admit(p, params) for params in draws]
            t0 = time.perf_counter()
            done = 0
            while done < len(qids):  # batch_cap may split the burst
                done += eng.step_batch()
            wall = time.perf_counter() - t0
            lat = [1000.0 * wall] * len(qids)
            eng.shutdown()
        else:
            rep = SerialReplayer(catalog, rows, stats)
            p = prepare_sql(spec.sql, catalog)
            lat = []
            t0 = time.perf_counter()
            for params in draws:
                s0 = time.perf_counter()
                rep.step(p, params, spec.join_method)
                lat.append(1000.0 * (time.perf_counter() - s0))
            wall = time.perf_counter() - t0
        report.statements.append(
            StatementMetrics.from_latencies(f"k={k:05d}", k, lat, limit, wall)
        )
        report.wall_s += wall
    return report.check_conservation()


# -- compare --------------------------------------------------------------------------

_SWEEP_ROW = re.compile(r"^k=(\d+)$")


@dataclass
class ComparePoint:
    statement: str
    a: StatementMetrics
    b: StatementMetrics

    @property
    def throughput_delta(self):
        if self.b.throughput_ops_s == 0:
            return 0.0
        return self.a.throughput_ops_s / self.b.throughput_ops_s - 1.0


@dataclass
class CompareResult:
    workload: str
    seed: int
    executors: tuple
    points: list
    sla_violations: tuple  # (a late total, b late total)
    crossover_k: int = None  # sweeps: first k where a finishes faster

    def text(self):
        a_name, b_name = self.executors
        lines = [
            f"workload {self.workload}  seed={self.seed}",
            f"A = {a_name}, B = {b_name}",
            "",
            f"{'statement':<18}{'A ops/s':>10}{'B ops/s':>10}{'Δ':>8}"
            f"{'A p95':>9}{'B p95':>9}{'A late':>8}{'B late':>8}",
        ]
        for p in self.points:
            lines.append(
                f"{p.statement:<18}{p.a.throughput_ops_s:>10.1f}"
                f"{p.b.throughput_ops_s:>10.1f}{p.throughput_delta:>+8.1%}"
                f"{p.a.p95_ms:>9.2f}{p.b.p95_ms:>9.2f}"
                f"{p.a.over_limit:>8}{p.b.over_limit:>8}"
            )
        a_late, b_late = self.sla_violations
        lines += ["", f"response-limit violations: A={a_late} B={b_late}"]
        if self.crossover_k is not None:
            lines.append(f"crossover: A completes the batch faster from k={self.crossover_k}")
        elif any(_SWEEP_ROW.match(p.statement) for p in self.points):
            lines.append("crossover: none within the swept range")
        return "\n".join(lines)


def compare(a, b):
    """Side-by-side comparison of two reports over the same workload."""
    if a.workload != b.workload or a.seed != b.seed:
        raise ConfigError(
            f"reports disagree on the workload:"
            f" {a.workload!r}/seed {a.seed} vs {b.workload!r}/seed {b.seed}"
        )
    a_names = [s.name for s in a.statements]
    if a_names != [s.name for s in b.statements]:
        raise ConfigError("reports carry different statement sets")
    points = [
        ComparePoint(name, a.statement(name), b.statement(name))
        for name in a_names
    ]
    crossover = None
    sweep_points = []
    for p in points:
        m = _SWEEP_ROW.match(p.statement)
        if m:
            sweep_points.append((int(m.group(1)), p))
    for k, p in sorted(sweep_points):
        if p.a.throughput_ops_s > p.b.throughput_ops_s:
            crossover = k
            break
    return CompareResult(
        workload=a.workload,
        seed=a.seed,
        executors=(a.executor, b.executor),
        points=points,
        sla_violations=(
            sum(p.a.over_limit for p in points),
            sum(p.b.over_limit for p in points),
        ),
        crossover_k=crossover,
    )


# -- verification ----------------------------------------------------------------------

FIVE_USERS_DDL = "CREATE TABLE USERS (NAME TEXT, ACCOUNT INT, BIRTHDATE DATE);"

FIVE_USERS_ROWS = [
    ("John Smith", 3000, "1980-03-05"),
    ("Kate Johnson", 800, "1976-04-11"),
    ("Bill Harisson", 1230, "1978-03-02"),
    ("Nick Lee", 540, "1982-02-09"),
    ("James Meyer", 2300, "1981-03-09"),
]

FIVE_USERS_EXPECTED = {
    "John Smith": {"A", "B"},
    "Kate Johnson": set(),
    "Bill Harisson": {"B"},
    "Nick Lee": {"A"},
    "James Meyer": {"A", "B"},
}


def scripted_scenario():
    """Two ordered selections over five users, one batch.

    Per-row membership is observable from the outside: a row belongs to
    a query exactly when its (unique) name appears in that query's
    output. Returns (memberships, rows of A, rows of B).
    """
    catalog = parse_catalog(FIVE_USERS_DDL)
    rows = [
        (name, account, datetime.date.fromisoformat(day))
        for name, account, day in FIVE_USERS_ROWS
    ]
    eng = Engine(
        catalog, data={"USERS": rows}, stats={"USERS": len(rows)},
        config=EngineConfig(manual=True),
    )
    qa = eng.register(
        "SELECT U.NAME FROM USERS U WHERE U.BIRTHDATE > ? ORDER BY U.NAME"
    )
    qb = eng.register(
        "SELECT U.NAME FROM USERS U WHERE U.ACCOUNT > ? ORDER BY U.NAME"
    )
    eng.start()
    qa_id = eng.admit(qa, (datetime.date(1980, 1, 1),))
    qb_id = eng.admit(qb, (1000,))
    eng.step_batch()
    a_rows = [r[0] for r in eng.wait(qa_id).rows]
    b_rows = [r[0] for r in eng.wait(qb_id).rows]
    memberships = {
        name: ({"A"} if name in a_rows else set())
        | ({"B"} if name in b_rows else set())
        for name, _, _ in FIVE_USERS_ROWS
    }
    return memberships, a_rows, b_rows


@dataclass
class VerifyResult:
    ok: bool
    checked: int  # operations compared against serial replay
    scenario_ok: bool
    failure: dict = None  # qid, statement, params, got, want, trace_len

    def text(self):
        if self.ok:
            return (
                f"PASS: scripted scenario and {self.checked} replayed"
                f" operations match"
            )
        if not self.scenario_ok:
            return f"FAIL: scripted scenario diverged: {self.failure}"
        f = self.failure
        return (
            "FAIL: batched result diverges from serial replay\n"
            f"  qid={f['qid']} statement={f['statement']}"
            f" params={f['params']!r}\n"
            f"  got:  {f['got']!r}\n"
            f"  want: {f['want']!r}\n"
            f"  repro: {f['trace_len']} operations"
            f" ({f['writes']} writes, then one batch around the failing"
            f" statement)"
        )


MUTATIONS = ("none", "join-keeps-unmatched-tags")


@contextlib.contextmanager
def _mutated(mutation):
    """Fault injection for the verifier's own mutation check."""
    if mutation in (None, "none"):
        yield
        return
    if mutation != "join-keeps-unmatched-tags":
        raise ConfigError(f"unknown mutation {mutation!r}; one of {MUTATIONS}")
    original = operators.join_tags
    operators.join_tags = lambda left, right: left  # drop the intersection
    try:
        yield
    finally:
        operators.join_tags = original


VERIFY_ROW_CAP = 10_000


def verify(config, n_ops=400, mutation=None):
    """Batched execution vs serial replay on the configured statement mix.

    Chunks the seeded operation stream into batches of varying size and
    compares every envelope against SerialReplayer. On divergence the
    repro is minimized to the prior writes plus the failing statement.
    """
    config.validate()
    catalog, rows, stats = ensure_dataset(config)
    oversized = {t: n for t, n in stats.items() if n > VERIFY_ROW_CAP}
    if oversized:
        raise ConfigError(
            f"verification needs tables of at most {VERIFY_ROW_CAP} rows;"
            f" shrink [data] {sorted(oversized)}"
        )
    with _mutated(mutation):
        memberships, a_rows, b_rows = scripted_scenario()
        if memberships != FIVE_USERS_EXPECTED:
            return VerifyResult(
                ok=False, checked=0, scenario_ok=False,
                failure={"got": memberships, "want": FIVE_USERS_EXPECTED},
            )
        if [sorted(a_rows), sorted(b_rows)] != [a_rows, b_rows]:
            return VerifyResult(
                ok=False, checked=0, scenario_ok=False,
                failure={"got": (a_rows, b_rows), "want": "name-ordered rows"},
            )

        rng = random.Random(config.seed)
        stream = op_stream(config, rng)
        ops = [next(stream) for _ in range(n_ops)]
        batches = _random_batches(ops, random.Random(~config.seed))
        failure = _replay_divergence(config, catalog, rows, stats, batches)
        if failure is not None:
            checked = failure["op_index"]
            failure = _minimize(config, catalog, rows, stats, batches, failure)
            return VerifyResult(
                ok=False, checked=checked, scenario_ok=True, failure=failure,
            )
    return VerifyResult(ok=True, checked=n_ops, scenario_ok=True)


def _random_batches(ops, rng):
    batches = []
    i = 0
    while i < len(ops):
        size = rng.randint(16, 256)
        batches.append(ops[i : i + size])
        i += size
    return batches


def _replay_divergence(config, catalog, rows, stats, batches):
    """First mismatching operation, or None; batches are (spec, params) lists."""
    prepared = _prepare_all(config, catalog)
    eng = Engine(
        catalog, data=rows, stats=stats,
        config=EngineConfig(manual=True, **config.engine),
    )
    for spec in config.statements:
        eng.register(prepared[spec.name], join_method=spec.join_method)
    eng.start()
    rep = SerialReplayer(catalog, rows, stats)

    done = 0
    try:
        for batch_index, chunk in enumerate(batches):
            qids = [
                eng.admit(prepared[spec.name], params)
                for spec, params in chunk
            ]
            eng.step_batch()
            for j, (qid, (spec, params)) in enumerate(zip(qids, chunk)):
                ts, tag, want = rep.step(
                    prepared[spec.name], params, spec.join_method
                )
                envelope = eng.poll(qid)
                got = _envelope_payload(envelope, tag)
                ordered = (
                    tag == "rows"
                    and rep.executor.plan_for(
                        prepared[spec.name], spec.join_method
                    ).ordered
                )
                if not _payloads_match(got, want, tag, ordered):
                    return {
                        "qid": qid,
                        "statement": spec.name,
                        "params": params,
                        "got": got,
                        "want": want,
                        "op_index": done + j,
                        "batch_index": batch_index,
                    }
            done += len(chunk)
    finally:
        eng.shutdown()
    return None


def _envelope_payload(envelope, tag):
    if envelope is None:
        return "<no result>"
    if envelope.error is not None:
        return envelope.error if tag == "error" else f"<error: {envelope.error}>"
    if envelope.rows is not None:
        return envelope.rows
    return envelope.affected


def _payloads_match(got, want, tag, ordered):
    if tag == "rows":
        if not isinstance(got, list):
            return False
        if ordered:
            return got == want
        return sorted(map(repr, got)) == sorted(map(repr, want))
    return got == want


def _minimize(config, catalog, rows, stats, batches, failure):
    """Smallest re-verified trace that still diverges.

    Divergence can need the failing operation's batch siblings (sharing
    faults only surface between concurrent queries), so the failing
    batch is kept whole while everything before it shrinks to its
    writes. A second attempt also thins the failing batch down to the
    failing statement's own instances. Every candidate is re-run; the
    reported repro is always a confirmed failure.
    """
    b = failure["batch_index"]
    write_names = {
        s.name
        for s in config.statements
        if not prepare_sql(s.sql, catalog).is_read()
    }
    prefix_writes = [
        (spec, params)
        for chunk in batches[:b]
        for spec, params in chunk
        if spec.name in write_names
    ]
    failing_batch = batches[b]
    stmt = failure["statement"]
    fail_op = next(
        op
        for op in failing_batch
        if op[0].name == stmt and op[1] == failure["params"]
    )
    same = [op for op in failing_batch if op[0].name == stmt]
    thinned = [
        op
        for op in failing_batch
        if op[0].name == stmt or op[0].name in write_names
    ]
    # smallest first: one sibling pair often suffices for sharing faults
    candidates = [
        [sibling, fail_op]
        for sibling in same[:32]
        if sibling is not fail_op
    ]
    candidates += [same, thinned, failing_batch]
    for last_batch in candidates:
        trace = [prefix_writes, last_batch] if prefix_writes else [last_batch]
        small = _replay_divergence(config, catalog, rows, stats, trace)
        if small is not None:
            ops = prefix_writes + last_batch
            small = dict(small)
            small["trace_len"] = len(ops)
            small["writes"] = sum(
                1 for spec, _ in ops if spec.name in write_names
            )
            small.pop("op_index", None)
            small.pop("batch_index", None)
            return small
    # shrinking lost the divergence; report the original run's shape
    chosen = dict(failure)
    chosen["trace_len"] = sum(len(c) for c in batches[: b + 1])
    chosen["writes"] = sum(
        1
        for chunk in batches[: b + 1]
        for spec, _ in chunk
        if spec.name in write_names
    )
    chosen.pop("op_index", None)
    chosen.pop("batch_index", None)
    return chosen
