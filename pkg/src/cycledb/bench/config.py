"""Workload configuration: INI files describing a benchmark run.

One file pins everything a run needs: the dataset, the statement mix,
the arrival process, the executor, and the engine knobs. The seed fully
determines the operation sequence, so two runs of the same file differ
only in wall-clock timings.

Sections:

    [workload]   name, seed, duration_s, rate | clients, think_time_ms,
                 executor, response_time_limit_ms
    [engine]     vector_size, edge_capacity, workers, idle_tick_s,
                 batch_cap (all optional)
    [data]       dir (optional; blank generates in memory), plus
                 per-table row counts
    [statement:<name>]
                 sql, weight, params, join (optional), limit_ms (optional)

Parameter specs are |-separated, one per placeholder:

    int:<lo>:<hi>        uniform integer, inclusive
    float:<lo>:<hi>      uniform float
    choice:a,b,c         uniform pick
    date:<iso>:<iso>     uniform day in the range, inclusive
    seq:<start>          per-statement counter (unique keys for inserts)
"""

from __future__ import annotations

import configparser
import datetime
from dataclasses import dataclass, field

from cycledb.errors import ConfigError

EXECUTORS = ("shared", "query-at-a-time")

#: dataset size bounds enforced on every [data] table entry
MIN_ROWS, MAX_ROWS = 1, 100_000


@dataclass(frozen=True)
class ParamSpec:
    kind: str  # int | float | choice | date | seq
    lo: object = None
    hi: object = None
    choices: tuple = ()

    def draw(self, rng, seq_state, key):
        if self.kind == "int":
            return rng.randint(self.lo, self.hi)
        if self.kind == "float":
            return rng.uniform(self.lo, self.hi)
        if self.kind == "choice":
            return rng.choice(self.choices)
        if self.kind == "date":
            span = (self.hi - self.lo).days
            return self.lo + datetime.timedelta(days=rng.randint(0, span))
        n = seq_state.get(key, self.lo)
        seq_state[key] = n + 1
        return n


def parse_param_spec(text):
    parts = [p.strip() for p in text.split(":")]
    kind = parts[0]
    try:
        if kind == "int" and len(parts) == 3:
            return ParamSpec("int", int(parts[1]), int(parts[2]))
        if kind == "float" and len(parts) == 3:
            return ParamSpec("float", float(parts[1]), float(parts[2]))
        if kind == "choice" and len(parts) == 2:
            choices = tuple(c.strip() for c in parts[1].split(","))
            if choices:
                return ParamSpec("choice", choices=choices)
        if kind == "date" and len(parts) == 3:
            lo = datetime.date.fromisoformat(parts[1])
            hi = datetime.date.fromisoformat(parts[2])
            return ParamSpec("date", lo, hi)
        if kind == "seq" and len(parts) == 2:
            return ParamSpec("seq", int(parts[1]))
    except ValueError as exc:
        raise ConfigError(f"bad parameter spec {text!r}: {exc}") from None
    raise ConfigError(f"bad parameter spec {text!r}")


@dataclass
class StatementSpec:
    name: str
    sql: str
    weight: float
    params: tuple = ()  # ParamSpec per placeholder
    join_method: str = None
    limit_ms: float = None  # falls back to the workload-wide limit


@dataclass
class WorkloadConfig:
    name: str = "workload"
    seed: int = 1
    duration_s: float = 1.0
    rate: float = 0.0  # open loop: target admissions per second
    clients: int = 0  # closed loop: concurrent clients
    think_time: tuple = ("fixed", 0.0)  # ("fixed"|"exp", milliseconds)
    executor: str = "shared"
    response_time_limit_ms: float = 1000.0
    engine: dict = field(default_factory=dict)  # EngineConfig overrides
    data_dir: str = None
    sizes: dict = field(default_factory=dict)  # table -> row count
    statements: list = field(default_factory=list)

    def validate(self):
        if self.executor not in EXECUTORS:
            raise ConfigError(
                f"executor must be one of {EXECUTORS}, got {self.executor!r}"
            )
        if not self.statements:
            raise ConfigError("at least one [statement:...] section is required")
        total = sum(s.weight for s in self.statements)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"statement weights sum to {total}, must sum to 1")
        if any(s.weight < 0 for s in self.statements):
            raise ConfigError("statement weights must be non-negative")
        if (self.rate > 0) == (self.clients > 0):
            raise ConfigError("exactly one of rate or clients must be positive")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        kind, value = self.think_time
        if kind not in ("fixed", "exp") or value < 0:
            raise ConfigError(f"bad think time {self.think_time!r}")
        for table, n in self.sizes.items():
            if not MIN_ROWS <= n <= MAX_ROWS:
                raise ConfigError(
                    f"[data] {table} = {n}: row counts must be within"
                    f" {MIN_ROWS}..{MAX_ROWS}"
                )
        names = [s.name for s in self.statements]
        if len(set(names)) != len(names):
            raise ConfigError("statement names must be unique")
        return self


def _parse_think_time(text):
    text = text.strip()
    if text.startswith("exp:"):
        return ("exp", float(text[4:]))
    return ("fixed", float(text))


_ENGINE_KEYS = {
    "vector_size": int,
    "edge_capacity": int,
    "workers": int,
    "idle_tick_s": float,
    "batch_cap": int,
    "batch_timeout_s": float,
}


def parse_config(text):
    """Parse INI text into a validated WorkloadConfig."""
    ini = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        ini.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    cfg = WorkloadConfig()
    if ini.has_section("workload"):
        w = ini["workload"]
        cfg.name = w.get("name", cfg.name)
        try:
            cfg.seed = w.getint("seed", cfg.seed)
            cfg.duration_s = w.getfloat("duration_s", cfg.duration_s)
            cfg.rate = w.getfloat("rate", cfg.rate)
            cfg.clients = w.getint("clients", cfg.clients)
            cfg.response_time_limit_ms = w.getfloat(
                "response_time_limit_ms", cfg.response_time_limit_ms
            )
        except ValueError as exc:
            raise ConfigError(f"[workload]: {exc}") from None
        cfg.executor = w.get("executor", cfg.executor).strip()
        if "think_time_ms" in w:
            cfg.think_time = _parse_think_time(w["think_time_ms"])

    if ini.has_section("engine"):
        for key, value in ini["engine"].items():
            conv = _ENGINE_KEYS.get(key)
            if conv is None:
                raise ConfigError(f"[engine]: unknown option {key!r}")
            try:
                cfg.engine[key] = conv(value)
            except ValueError as exc:
                raise ConfigError(f"[engine] {key}: {exc}") from None

    if ini.has_section("data"):
        for key, value in ini["data"].items():
            if key == "dir":
                cfg.data_dir = value.strip() or None
            else:
                try:
                    cfg.sizes[key.upper()] = int(value)
                except ValueError as exc:
                    raise ConfigError(f"[data] {key}: {exc}") from None

    for section in ini.sections():
        if not section.startswith("statement:"):
            continue
        name = section.split(":", 1)[1].strip()
        s = ini[section]
        if "sql" not in s:
            raise ConfigError(f"[{section}]: sql is required")
        try:
            weight = s.getfloat("weight", 0.0)
        except ValueError as exc:
            raise ConfigError(f"[{section}] weight: {exc}") from None
        params = tuple(
            parse_param_spec(p)
            for p in s.get("params", "").split("|")
            if p.strip()
        )
        limit = s.getfloat("limit_ms", fallback=None)
        cfg.statements.append(
            StatementSpec(
                name=name,
                sql=s["sql"].strip(),
                weight=weight,
                params=params,
                join_method=s.get("join", fallback=None),
                limit_ms=limit,
            )
        )
    cfg.statements.sort(key=lambda s: s.name)
    return cfg.validate()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
