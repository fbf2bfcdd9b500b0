"""Command-line front end for the benchmark harness.

    bench run --config w.ini [--out report.csv]
    bench verify --config w.ini [--ops N] [--mutation NAME]
    bench compare a.csv b.csv
    bench gen --config w.ini
    bench kernels

run executes the configured workload and writes one CSV report; verify
checks batched execution against serial replay and exits 0 on pass;
compare prints two reports side by side; gen materializes the dataset
CSVs; kernels times the merge-kernel implementations.
"""

from __future__ import annotations

import argparse
import sys

from cycledb.errors import EngineError

from cycledb.bench import datagen, harness
from cycledb.bench.config import load_config


def _add_config(parser):
    parser.add_argument("--config", required=True, help="workload INI file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bench", description="workload benchmarks for cycledb"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a workload, write a CSV report")
    _add_config(p_run)
    p_run.add_argument("--out", default=None, help="report path (default: <name>.csv)")

    p_verify = sub.add_parser(
        "verify", help="check batched execution against serial replay"
    )
    _add_config(p_verify)
    p_verify.add_argument("--ops", type=int, default=400,
                          help="operations to replay (default 400)")
    p_verify.add_argument(
        "--mutation", default=None, choices=harness.MUTATIONS,
        help="inject a known fault; verification is then expected to fail",
    )

    p_compare = sub.add_parser("compare", help="two reports side by side")
    p_compare.add_argument("report_a")
    p_compare.add_argument("report_b")

    p_gen = sub.add_parser("gen", help="write the dataset CSVs for a workload")
    _add_config(p_gen)

    sub.add_parser("kernels", help="time the query-set merge kernels")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            report = harness.run(config)
            out = args.out or f"{config.name}.csv"
            report.to_csv(out)
            print(report.summary())
            print(f"\nreport written to {out}")
            return 0

        if args.command == "verify":
            config = load_config(args.config)
            result = harness.verify(config, n_ops=args.ops,
                                    mutation=args.mutation)
            print(result.text())
            return 0 if result.ok else 1

        if args.command == "compare":
            a = harness.MetricsReport.from_csv(args.report_a)
            b = harness.MetricsReport.from_csv(args.report_b)
            print(harness.compare(a, b).text())
            return 0

        if args.command == "gen":
            config = load_config(args.config)
            if config.data_dir is None:
                print("config has no [data] dir; nothing to write",
                      file=sys.stderr)
                return 2
            catalog, rows, stats = datagen.ensure_dataset(config)
            print(f"dataset under {config.data_dir}:")
            for name in sorted(stats):
                print(f"  {name.lower()}.csv: {stats[name]} rows")
            return 0

        from cycledb.bench.kernels import format_kernels, run_kernels

        print(format_kernels(run_kernels()))
        return 0
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
