"""Plan compilation, merging, path assignment, sharing analysis."""

import datetime

import pytest

from cycledb.errors import PlanError
from cycledb.planner import (
    AccessPlan,
    GlobalPlan,
    GroupByPlan,
    JoinPlan,
    OutputPlan,
    SortPlan,
    WritePlan,
    compile_single,
    sharing_benefit,
)
from cycledb.predicates import Param
from cycledb.sqlfront import bind, parse_catalog, parse_resolved, prepare_sql

CATALOG = parse_catalog(
    """
    CREATE TABLE USERS (USER_ID INT PRIMARY KEY, USERNAME TEXT, COUNTRY TEXT);
    CREATE TABLE ORDERS (ORDER_ID INT PRIMARY KEY, USER_ID INT, ITEM_ID INT,
                         STATUS TEXT, DATE DATE);
    CREATE TABLE ITEMS (ITEM_ID INT PRIMARY KEY, AUTHOR_ID INT, PRICE FLOAT,
                        CATEGORY TEXT, AVAILABLE INT);
    CREATE TABLE AUTHORS (AUTHOR_ID INT PRIMARY KEY, NAME TEXT);
    """
)

STATS = {"USERS": 1000, "ORDERS": 10000, "ITEMS": 500, "AUTHORS": 200}

Q1 = "SELECT COUNTRY, SUM(USER_ID) FROM USERS GROUP BY COUNTRY"
Q2 = (
    "SELECT * FROM USERS U, ORDERS O WHERE U.USER_ID = O.USER_ID"
    " AND U.USERNAME = ? AND O.STATUS = 'OK'"
)
Q3 = (
    "SELECT * FROM USERS U, ORDERS O, ITEMS I WHERE U.USER_ID = O.USER_ID"
    " AND O.ITEM_ID = I.ITEM_ID AND I.AVAILABLE < ?"
)
Q4 = (
    "SELECT * FROM ORDERS O, ITEMS I WHERE O.ITEM_ID = I.ITEM_ID"
    " AND O.DATE > ? ORDER BY I.PRICE"
)
Q5 = "SELECT * FROM ITEMS I WHERE I.CATEGORY = ? ORDER BY I.PRICE"

LIGHT = (
    "SELECT I.ITEM_ID, A.NAME FROM ITEMS I, AUTHORS A"
    " WHERE I.ITEM_ID = ? AND I.AUTHOR_ID = A.AUTHOR_ID"
)


def logical(sql, join_method=None):
    return compile_single(parse_resolved(sql, CATALOG), STATS, join_method)


# -- compile_single ----------------------------------------------------------


def test_compile_pushes_predicates_onto_accesses():
    plan = logical(Q2)
    assert isinstance(plan, OutputPlan)
    join = plan.child
    assert isinstance(join, JoinPlan)
    assert isinstance(join.outer, AccessPlan) and join.outer.table == "USERS"
    assert join.inner.table == "ORDERS"
    assert join.outer.pred.render() == "USERNAME = ?"
    assert join.inner.pred.render() == "STATUS = 'OK'"
    assert join.outer_key == ("USERS", "USER_ID")
    assert join.inner_key == ("ORDERS", "USER_ID")
    assert join.method == "hash"


def test_compile_single_table_sort():
    plan = logical(Q5)
    sort = plan.child
    assert isinstance(sort, SortPlan)
    assert sort.key == ("ITEMS", "PRICE") and not sort.desc
    access = sort.child
    assert isinstance(access, AccessPlan) and access.table == "ITEMS"
    assert access.pred.render() == "CATEGORY = ?"


def test_compile_no_where_gives_empty_predicate():
    plan = logical("SELECT * FROM ITEMS")
    assert isinstance(plan.child, AccessPlan)
    assert plan.child.pred.is_true()


def test_compile_group_by():
    plan = logical(Q1)
    gb = plan.child
    assert isinstance(gb, GroupByPlan)
    assert gb.keys == (("USERS", "COUNTRY"),)
    assert gb.aggs == (("SUM", ("USERS", "USER_ID")),)
    assert plan.projection == (0, 1)
    assert plan.labels == ("COUNTRY", "SUM(USER_ID)")


def test_compile_projection_reorders():
    plan = logical("SELECT SUM(USER_ID), COUNTRY FROM USERS GROUP BY COUNTRY")
    assert plan.projection == (1, 0)


def test_compile_build_side_smaller_base_table():
    # USERS (1000) smaller than ORDERS (10000): the FROM-first side builds
    assert logical(Q2).child.build_is_outer is True
    # ORDERS (10000) larger than ITEMS (500): the FROM-later side builds
    assert logical(Q4).child.child.build_is_outer is False


def test_compile_point_lookup_selects_index_join():
    plan = logical(LIGHT)
    join = plan.child
    assert join.method == "inl"
    assert join.inner_key == ("AUTHORS", "AUTHOR_ID")
    # same join without the point predicate stays a hash join
    hashy = logical(
        "SELECT I.ITEM_ID, A.NAME FROM ITEMS I, AUTHORS A"
        " WHERE I.AUTHOR_ID = A.AUTHOR_ID"
    )
    assert hashy.child.method == "hash"


def test_compile_qid_hint():
    plan = logical(Q2, join_method="qid")
    assert plan.child.method == "qid"


def test_compile_cross_join_rejected():
    with pytest.raises(PlanError, match="no join condition"):
        logical("SELECT * FROM USERS U, ORDERS O WHERE U.USERNAME = 'x'")


def test_compile_writes():
    w = logical("INSERT INTO AUTHORS VALUES (1, 'ann')")
    assert isinstance(w, WritePlan) and w.kind == "INSERT"
    w = logical("UPDATE ITEMS SET PRICE = ? WHERE ITEM_ID = 3")
    assert w.kind == "UPDATE" and w.assignments == ((2, Param(0)),)
    assert w.pred.render() == "ITEM_ID = 3"


# -- merge -------------------------------------------------------------------


def merged_workload_plan():
    plan = GlobalPlan(CATALOG, STATS)
    prepared = {}
    for name, sql in [("Q1", Q1), ("Q2", Q2), ("Q3", Q3), ("Q4", Q4), ("Q5", Q5)]:
        prepared[name] = prepare_sql(sql, CATALOG)
        plan.register(prepared[name])
    return plan, prepared


def nodes_for(plan, prepared):
    return {plan.node(s.node_id).kind: s.node_id for s in plan.templates[prepared.statement_id].steps}


def test_merge_workload_produces_four_shared_operators():
    plan, prepared = merged_workload_plan()
    ops = plan.operator_nodes()
    assert len(ops) == 4
    kinds = sorted(n.kind for n in ops)
    assert kinds == ["groupby", "hashjoin", "hashjoin", "sort"]
    assert len(plan.access_nodes()) == 3
    plan.check_acyclic()

    by_q = {name: nodes_for(plan, p) for name, p in prepared.items()}
    join1 = by_q["Q2"]["hashjoin"]
    # the first join is shared by Q2 and Q3
    q3_joins = [
        s.node_id
        for s in plan.templates[prepared["Q3"].statement_id].steps
        if plan.node(s.node_id).kind == "hashjoin"
    ]
    assert join1 in q3_joins
    # the second join is shared by Q3 and Q4
    join2 = by_q["Q4"]["hashjoin"]
    assert join2 in q3_joins and join2 != join1
    # the sort is shared by Q4 and Q5
    assert by_q["Q4"]["sort"] == by_q["Q5"]["sort"]
    # the group-by serves Q1 alone
    assert plan.node(by_q["Q1"]["groupby"]).identity == (
        "groupby",
        (("USERS", "COUNTRY"),),
    )


def test_merge_identical_statement_adds_no_nodes():
    plan, _ = merged_workload_plan()
    n_nodes, n_edges = len(plan.nodes), len(plan.edges)
    again = prepare_sql(Q4, CATALOG)
    plan.register(again)
    assert len(plan.nodes) == n_nodes
    assert len(plan.edges) == n_edges


def test_merge_idempotent_per_statement():
    plan, prepared = merged_workload_plan()
    n = len(plan.nodes)
    t1 = plan.register(prepared["Q3"])
    assert t1 is plan.templates[prepared["Q3"].statement_id]
    assert len(plan.nodes) == n


def test_merge_reordered_from_shares_joins():
    plan, prepared = merged_workload_plan()
    n_nodes = len(plan.nodes)
    reordered = prepare_sql(
        "SELECT * FROM ORDERS O, USERS U, ITEMS I WHERE U.USER_ID = O.USER_ID"
        " AND O.ITEM_ID = I.ITEM_ID AND I.AVAILABLE < ?",
        CATALOG,
    )
    plan.register(reordered)
    # same join identities by lineage: no new nodes, only new edges
    assert len(plan.nodes) == n_nodes


def test_merged_node_count_bounded_by_inputs():
    plan, _ = merged_workload_plan()
    per_statement_counts = []
    for sql in (Q1, Q2, Q3, Q4, Q5):
        single = GlobalPlan(CATALOG, STATS)
        single.register(prepare_sql(sql, CATALOG))
        per_statement_counts.append(len(single.nodes))
    assert len(plan.nodes) <= sum(per_statement_counts)


def test_describe_lists_nodes_and_paths():
    plan, _ = merged_workload_plan()
    text = plan.describe()
    assert "hashjoin build=USERS.USER_ID probe=ORDERS.USER_ID" in text
    assert "sort ITEMS.PRICE asc" in text
    assert "groupby [USERS.COUNTRY]" in text
    assert text.count("s") >= 5  # one path line per statement


# -- assign_path --------------------------------------------------------------


def test_assign_path_group_by_shape():
    plan = GlobalPlan(CATALOG, STATS)
    p = prepare_sql(Q1, CATALOG)
    plan.register(p)
    inst = bind(p, (), qid=3, arrival=3)
    path = plan.assign_path(inst)
    kinds = [plan.node(s.node_id).kind for s in path.template.steps]
    assert kinds == ["access", "groupby", "output"]
    assert path.qid == 3 and path.snapshot == 3


def test_assign_path_binds_parameters():
    plan = GlobalPlan(CATALOG, STATS)
    p = prepare_sql(Q4, CATALOG)
    plan.register(p)
    d = datetime.date(2011, 6, 1)
    inst = bind(p, (d,), qid=9, arrival=9)
    path = plan.assign_path(inst)
    access_orders = next(
        s.node_id
        for s in path.template.steps
        if plan.node(s.node_id).kind == "access"
        and plan.node(s.node_id).config["table"] == "ORDERS"
    )
    bound_pred = path.bound[access_orders]["pred"]
    assert any(a.op == ">" and a.operand == d for a in bound_pred.atoms)


def test_assign_path_unregistered_statement():
    plan = GlobalPlan(CATALOG, STATS)
    p = prepare_sql(Q1, CATALOG)
    inst = bind(p, (), qid=1, arrival=1)
    with pytest.raises(PlanError, match="not registered"):
        plan.assign_path(inst)


def test_build_write_op_binds_params():
    from cycledb.storage import UpdateOp

    plan = GlobalPlan(CATALOG, STATS)
    p = prepare_sql("UPDATE ITEMS SET PRICE = ? WHERE ITEM_ID = ?", CATALOG)
    plan.register(p)
    inst = bind(p, (19.5, 7), qid=2, arrival=2)
    op = plan.build_write_op(inst)
    assert isinstance(op, UpdateOp)
    assert op.assignments == ((2, 19.5),)
    assert op.pred.eval((7, 1, 0.0, "x", 1))
    assert not op.pred.eval((8, 1, 0.0, "x", 1))


# -- sharing benefit ------------------------------------------------------------


def test_sharing_linear_overlap_wins():
    e = sharing_benefit("linear", 100, [60, 60])
    assert e.benefit is True
    assert e.shared_cost == 100 and e.separate_cost == 120


def test_sharing_nlogn_disjoint_halves_loses():
    # one 1024-row sort vs two 512-row sorts: 10240 > 9216
    e = sharing_benefit("nlogn", 1024, [512, 512])
    assert e.shared_cost == pytest.approx(10240.0)
    assert e.separate_cost == pytest.approx(9216.0)
    assert e.benefit is False


def test_sharing_single_query_never_benefits():
    for f in ("linear", "nlogn"):
        assert sharing_benefit(f, 700, [700]).benefit is False


def test_sharing_input_validation():
    with pytest.raises(PlanError, match="exceeds"):
        sharing_benefit("linear", 10, [4, 4])
    with pytest.raises(PlanError, match="non-negative"):
        sharing_benefit("linear", 1, [-1, 5])
    with pytest.raises(PlanError, match="complexity"):
        sharing_benefit("quadratic", 1, [1])
