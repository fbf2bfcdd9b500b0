"""Benchmark harness: workloads, metrics, verification, comparisons."""

from cycledb.bench.config import (
    ParamSpec,
    StatementSpec,
    WorkloadConfig,
    load_config,
    parse_config,
)
from cycledb.bench.datagen import (
    BOOKSTORE_DDL,
    bookstore_catalog,
    ensure_dataset,
    generate,
    write_csvs,
)
from cycledb.bench.harness import (
    CompareResult,
    MetricsReport,
    StatementMetrics,
    VerifyResult,
    compare,
    run,
    scripted_scenario,
    sweep,
    verify,
)
from cycledb.bench.kernels import run_kernels

__all__ = [
    "BOOKSTORE_DDL",
    "CompareResult",
    "MetricsReport",
    "ParamSpec",
    "StatementSpec",
    "StatementMetrics",
    "VerifyResult",
    "WorkloadConfig",
    "bookstore_catalog",
    "compare",
    "ensure_dataset",
    "generate",
    "load_config",
    "parse_config",
    "run",
    "run_kernels",
    "scripted_scenario",
    "sweep",
    "verify",
    "write_csvs",
]
