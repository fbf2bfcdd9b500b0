"""Benchmark harness: configs, datasets, reports, comparison, verification."""

import random

import pytest

from cycledb.bench import (
    compare,
    ensure_dataset,
    generate,
    parse_config,
    run,
    run_kernels,
    scripted_scenario,
    sweep,
    verify,
    write_csvs,
)
from cycledb.bench.cli import main
from cycledb.bench.config import parse_param_spec
from cycledb.bench.datagen import bookstore_catalog
from cycledb.bench.harness import (
    FIVE_USERS_EXPECTED,
    MetricsReport,
    nearest_rank,
    op_stream,
)
from cycledb.errors import ConfigError

BASE_INI = """
[workload]
name = mix
seed = 5
duration_s = 0.3
rate = 150
executor = shared
response_time_limit_ms = 50

[data]
users = 300
authors = 40
items = 120
orders = 600
order_lines = 900

[statement:point]
sql = SELECT U.USERNAME FROM USERS U WHERE U.USER_ID = ?
weight = 0.5
params = int:1:300

[statement:country_sum]
sql = SELECT U.COUNTRY, SUM(U.ACCOUNT) FROM USERS U WHERE U.ACCOUNT > ? GROUP BY U.COUNTRY
weight = 0.3
params = int:0:2000

[statement:topup]
sql = UPDATE USERS SET ACCOUNT = ? WHERE USER_ID = ?
weight = 0.2
params = int:0:5000|int:1:300
"""

# both join sides carry per-query filters, so a dropped tag
# intersection is observable between concurrent instances
JOIN_INI = """
[workload]
name = verifymix
seed = 23
duration_s = 0.3
rate = 150
executor = shared
response_time_limit_ms = 100

[data]
users = 300
authors = 40
items = 120
orders = 600
order_lines = 900

[statement:status_items]
sql = SELECT O.ORDER_ID, I.PRICE FROM ORDERS O, ITEMS I WHERE O.ITEM_ID = I.ITEM_ID AND O.STATUS = ? AND I.CATEGORY = ?
weight = 0.4
params = choice:placed,shipped,delivered,returned|choice:fiction,science,history,travel,cooking

[statement:point]
sql = SELECT U.USERNAME FROM USERS U WHERE U.USER_ID = ?
weight = 0.3
params = int:1:300

[statement:topup]
sql = UPDATE USERS SET ACCOUNT = ? WHERE USER_ID = ?
weight = 0.3
params = int:0:5000|int:1:300
"""


# -- configuration ---------------------------------------------------------------


def test_config_parses_every_section():
    cfg = parse_config(BASE_INI)
    assert cfg.name == "mix" and cfg.seed == 5
    assert cfg.rate == 150 and cfg.clients == 0
    assert [s.name for s in cfg.statements] == ["country_sum", "point", "topup"]
    assert cfg.sizes["USERS"] == 300
    point = next(s for s in cfg.statements if s.name == "point")
    assert point.params[0].kind == "int"


@pytest.mark.parametrize(
    "breakage",
    [
        ("weight = 0.5", "weight = 0.4"),  # weights no longer sum to 1
        ("executor = shared", "executor = eager"),
        ("rate = 150", "rate = 0"),  # neither rate nor clients
        ("params = int:1:300", "params = int:1"),  # malformed spec
        ("users = 300", "users = 500000"),  # over the size cap
    ],
)
def test_config_rejects_bad_input(breakage):
    old, new = breakage
    with pytest.raises(ConfigError):
        parse_config(BASE_INI.replace(old, new))


def test_param_specs_cover_the_grammar():
    rng = random.Random(1)
    seq = {}
    assert 1 <= parse_param_spec("int:1:5").draw(rng, seq, "a") <= 5
    assert 0.0 <= parse_param_spec("float:0:1").draw(rng, seq, "b") <= 1.0
    assert parse_param_spec("choice:x,y").draw(rng, seq, "c") in ("x", "y")
    d = parse_param_spec("date:2020-01-01:2020-01-03").draw(rng, seq, "d")
    assert d.year == 2020 and d.month == 1
    s = parse_param_spec("seq:100")
    assert [s.draw(rng, seq, "e") for _ in range(3)] == [100, 101, 102]


def test_the_seed_determines_the_operation_sequence():
    cfg = parse_config(BASE_INI)
    take = lambda: [
        (spec.name, params)
        for spec, params in (
            next(op_stream(cfg, random.Random(cfg.seed))) for _ in range(50)
        )
    ]
    first, second = take(), take()
    assert first == second
    other = [
        (spec.name, params)
        for spec, params in (
            next(op_stream(cfg, random.Random(cfg.seed + 1))) for _ in range(50)
        )
    ]
    assert first != other


# -- dataset ----------------------------------------------------------------------


def test_generated_rows_are_reproducible_and_keyed():
    a = generate({"USERS": 50, "ORDERS": 80}, seed=3)
    b = generate({"USERS": 50, "ORDERS": 80}, seed=3)
    assert a == b
    assert generate({"USERS": 50, "ORDERS": 80}, seed=4) != a
    assert [r[0] for r in a["USERS"]] == list(range(1, 51))
    item_ids = {r[0] for r in a["ITEMS"]}
    assert all(o[2] in item_ids for o in a["ORDERS"])


def test_csv_round_trip_reproduces_the_dataset(tmp_path):
    catalog = bookstore_catalog()
    rows = generate({"USERS": 40, "ORDERS": 60, "ORDER_LINES": 70}, seed=8)
    write_csvs(catalog, rows, tmp_path)
    cfg = parse_config(BASE_INI)
    cfg.data_dir = str(tmp_path)
    _, loaded, stats = ensure_dataset(cfg)
    assert loaded == rows
    assert stats["USERS"] == 40


# -- runs and reports --------------------------------------------------------------


def run_base(executor="shared", **tweaks):
    cfg = parse_config(BASE_INI.replace("executor = shared", f"executor = {executor}"))
    for key, value in tweaks.items():
        setattr(cfg, key, value)
    return run(cfg)


@pytest.mark.parametrize("executor", ["shared", "query-at-a-time"])
def test_reports_conserve_operations(executor):
    report = run_base(executor)
    total = report.totals()
    assert total.issued > 0
    assert total.successful + total.over_limit + total.in_flight == total.issued
    assert total.successful <= total.issued
    for s in report.statements:
        assert s.p50_ms <= s.p95_ms <= s.p99_ms <= s.max_ms
    if executor == "shared":
        assert report.batches <= report.cycles
        assert any(label.startswith("access") for label in report.nodes)
    else:
        assert "query-at-a-time" in report.nodes


def test_same_seed_gives_the_same_prefix_of_results():
    cfg = parse_config(BASE_INI)
    _, first = run(cfg, keep_results=True)
    _, second = run(parse_config(BASE_INI), keep_results=True)
    n = min(len(first), len(second))
    assert n > 10
    for qid in range(1, n + 1):
        name_a, params_a, env_a = first[qid]
        name_b, params_b, env_b = second[qid]
        assert (name_a, params_a) == (name_b, params_b)
        assert (env_a is None) == (env_b is None)
        if env_a is not None:
            if env_a.rows is not None:
                assert sorted(map(repr, env_a.rows)) == sorted(map(repr, env_b.rows))
            else:
                assert (env_a.affected, env_a.error) == (env_b.affected, env_b.error)


def test_percentiles_come_from_nearest_rank():
    values = [1.0, 2.0, 3.0, 4.0]
    assert nearest_rank(values, 50) == 2.0
    assert nearest_rank(values, 95) == 4.0
    assert nearest_rank([7.5], 99) == 7.5
    assert nearest_rank([], 50) == 0.0


def test_report_csv_round_trip_is_exact(tmp_path):
    report = run_base()
    path = tmp_path / "report.csv"
    report.to_csv(path)
    again = MetricsReport.from_csv(path)
    assert again.workload == report.workload and again.seed == report.seed
    assert again.cycles == report.cycles
    for mine, theirs in zip(report.statements, again.statements):
        assert mine.row() == theirs.row()


# -- compare -----------------------------------------------------------------------


def test_compare_of_a_report_with_itself_is_flat(tmp_path):
    report = run_base()
    result = compare(report, report)
    assert all(p.throughput_delta == 0.0 for p in result.points)
    assert result.sla_violations[0] == result.sla_violations[1]
    assert "workload mix" in result.text()


def test_compare_refuses_mismatched_workloads():
    a = run_base()
    cfg = parse_config(BASE_INI.replace("seed = 5", "seed = 6"))
    b = run(cfg)
    with pytest.raises(ConfigError):
        compare(a, b)


def test_sweep_reports_a_crossover():
    heavy = parse_config(BASE_INI)
    shared = sweep(heavy, [1, 64], statement="country_sum")
    baseline = sweep(
        parse_config(BASE_INI.replace("executor = shared",
                                      "executor = query-at-a-time")),
        [1, 64],
        statement="country_sum",
    )
    names = [s.name for s in shared.statements]
    assert names == ["k=00001", "k=00064"]
    assert shared.statement("k=00064").issued == 64
    result = compare(shared, baseline)
    # one shared pass beats 64 separate scans well before k=64
    assert result.crossover_k == 64 or result.crossover_k == 1


# -- verification -------------------------------------------------------------------


def test_scripted_scenario_memberships():
    memberships, a_rows, b_rows = scripted_scenario()
    assert memberships == FIVE_USERS_EXPECTED
    assert a_rows == ["James Meyer", "John Smith", "Nick Lee"]
    assert b_rows == ["Bill Harisson", "James Meyer", "John Smith"]


def test_verify_passes_on_the_real_engine():
    result = verify(parse_config(JOIN_INI), n_ops=200)
    assert result.ok and result.scenario_ok
    assert result.checked == 200
    assert "PASS" in result.text()


def test_verify_catches_a_broken_join_tag_rule():
    result = verify(
        parse_config(JOIN_INI), n_ops=200, mutation="join-keeps-unmatched-tags"
    )
    assert not result.ok
    assert result.scenario_ok  # the fault needs a join; the scenario has none
    failure = result.failure
    assert failure["statement"] == "status_items"
    assert failure["trace_len"] >= 2
    assert failure["got"] != failure["want"]
    assert "FAIL" in result.text()
    # the fault context manager restored the real rule
    assert verify(parse_config(JOIN_INI), n_ops=60).ok


def test_verify_rejects_unknown_mutations_and_oversized_tables():
    with pytest.raises(ConfigError):
        verify(parse_config(JOIN_INI), mutation="scramble-everything")
    big = parse_config(JOIN_INI.replace("orders = 600", "orders = 60000"))
    with pytest.raises(ConfigError):
        verify(big)


# -- kernels ------------------------------------------------------------------------


def test_kernel_bench_times_every_available_backend():
    result = run_kernels(n_pairs=200, repeat=2)
    assert result["active"] in ("pure", "compiled")
    assert "pure" in result["backends"]
    for timings in result["backends"].values():
        assert timings["union_us"] > 0
        assert timings["intersect_us"] > 0


# -- command line -------------------------------------------------------------------


def test_cli_run_verify_compare(tmp_path):
    cfg_path = tmp_path / "w.ini"
    cfg_path.write_text(BASE_INI)
    out_a = tmp_path / "a.csv"
    assert main(["run", "--config", str(cfg_path), "--out", str(out_a)]) == 0
    assert out_a.exists()

    out_b = tmp_path / "b.csv"
    qat = BASE_INI.replace("executor = shared", "executor = query-at-a-time")
    qat_path = tmp_path / "q.ini"
    qat_path.write_text(qat)
    assert main(["run", "--config", str(qat_path), "--out", str(out_b)]) == 0

    assert main(["compare", str(out_a), str(out_b)]) == 0
    assert main(["kernels"]) == 0

    join_path = tmp_path / "j.ini"
    join_path.write_text(JOIN_INI)
    assert main(["verify", "--config", str(join_path), "--ops", "80"]) == 0
    assert main([
        "verify", "--config", str(join_path), "--ops", "80",
        "--mutation", "join-keeps-unmatched-tags",
    ]) == 1


def test_cli_reports_config_errors_as_exit_code_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(BASE_INI.replace("weight = 0.5", "weight = 0.9"))
    assert main(["run", "--config", str(bad)]) == 2
