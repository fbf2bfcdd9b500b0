"""Per-statement logical plans and the merged always-on plan graph.

compile_single turns one resolved statement into a logical tree with
every filter pushed onto its table access (left-deep joins in FROM
order).  GlobalPlan.register merges such trees into one DAG: a node is
reused iff another statement already created a node of the same kind
with the same identity, where identity is built from column *lineage*
(base table + attribute), never from statement-local aliases:

    access   (table,)
    hashjoin (build table.key, probe lineage table.key)
    qidjoin  same shape as hashjoin
    inljoin  (probed table.key, probe lineage table.key)
    sort     (key lineage, direction)
    groupby  (ordered group-key lineages)
    output   () - single sink, routing folded in

Per-statement state (predicates, Top-N counts, HAVING, projections)
never lands on a node; it travels in the statement's PathTemplate and
is bound per query instance by assign_path.  Ties between legal merge
partners go to the first-registered node; plans that cannot merge stay
separate.

Join designation: the build side of a hash join must be a base table
(a composite input can only stream, i.e. probe).  When both inputs are
base tables the smaller one by row-count stats builds; ties keep the
FROM-later table as build side.  The designation is part of node
identity, so all sharers agree with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from cycledb.errors import PlanError
from cycledb.predicates import Atom, Param, Predicate
from cycledb.sqlfront import (
    AggTerm,
    ColumnRef,
    DeleteStatement,
    InsertStatement,
    ResolvedStatement,
    SelectStatement,
    UpdateStatement,
)

JOIN_METHODS = ("hash", "inl", "qid")


# -- logical (per-statement) plans ----------------------------------------------


@dataclass(frozen=True)
class AccessPlan:
    table: str
    alias: str
    pred: Predicate  # template; may contain Params
    schema: tuple  # ((table, attr), ...)


@dataclass(frozen=True)
class JoinPlan:
    outer: object
    inner: AccessPlan
    method: str
    outer_key: tuple  # lineage (table, attr) on the outer stream
    inner_key: tuple
    build_is_outer: bool  # hash/qid only; inl always probes storage
    schema: tuple  # outer schema + inner schema


@dataclass(frozen=True)
class SortPlan:
    child: object
    key: tuple  # lineage
    desc: bool
    limit: object  # int or None
    schema: tuple


@dataclass(frozen=True)
class GroupByPlan:
    child: object
    keys: tuple  # lineages, ordered
    aggs: tuple  # (func, lineage or None)
    having: tuple  # (term, op, operand); term = ("key", lineage) | ("agg", func, lineage)
    schema: tuple  # key lineages + ("agg-i" pseudo columns)


@dataclass(frozen=True)
class OutputPlan:
    child: object
    projection: tuple  # indexes into child.schema
    labels: tuple
    ordered: bool


@dataclass(frozen=True)
class WritePlan:
    kind: str  # INSERT | UPDATE | DELETE
    table: str
    values: tuple  # INSERT: literal | Param per column
    assignments: tuple  # UPDATE: (attr index, literal | Param)
    pred: Predicate  # UPDATE/DELETE row filter template


def _table_schema_cols(schema):
    return tuple((schema.name, attr) for attr in schema.attrs)


def _single_table_predicates(resolved):
    """Push every filter onto its owning table: alias -> Predicate."""
    by_alias = {}
    for cond in resolved.filters:
        by_alias.setdefault(cond.left.qualifier, []).append(
            Atom(cond.left.name, cond.op, cond.operand)
        )
    return {
        alias: Predicate(atoms) for alias, atoms in by_alias.items()
    }


def _has_pk_equality(schema, pred):
    pk = schema.primary_key
    if pk is None:
        return False
    return any(a.attr == pk and a.op == "=" for a in pred.atoms)


def compile_single(resolved, stats=None, join_method=None):
    """One statement -> logical plan tree with pushed-down predicates.

    stats maps table name -> row count and steers hash-join build-side
    choice; join_method forces "hash"/"inl"/"qid" for every join in the
    statement (the per-statement sharing hint).
    """
    if join_method is not None and join_method not in JOIN_METHODS:
        raise PlanError(f"unknown join method {join_method}")
    stmt = resolved.statement
    if isinstance(stmt, InsertStatement):
        return WritePlan("INSERT", stmt.table, stmt.values, (), Predicate())
    if isinstance(stmt, (UpdateStatement, DeleteStatement)):
        schema = resolved.schemas[stmt.table]
        pred = Predicate(
            [Atom(c.left.name, c.op, c.operand) for c in stmt.conditions]
        )
        if isinstance(stmt, UpdateStatement):
            assignments = tuple(
                (schema.index(attr), v) for attr, v in stmt.assignments
            )
            return WritePlan("UPDATE", stmt.table, (), assignments, pred)
        return WritePlan("DELETE", stmt.table, (), (), pred)
    if not isinstance(stmt, SelectStatement):
        raise PlanError(f"cannot plan {stmt!r}")

    stats = stats or {}
    pushed = _single_table_predicates(resolved)
    aliases = resolved.schemas  # alias -> Schema, FROM order preserved in stmt.tables
    alias_to_table = {a: s.name for a, s in aliases.items()}

    def lineage(ref):
        return (alias_to_table[ref.qualifier], ref.name)

    accesses = {}
    for tr in stmt.tables:
        schema = aliases[tr.alias]
        accesses[tr.alias] = AccessPlan(
            table=schema.name,
            alias=tr.alias,
            pred=pushed.get(tr.alias, Predicate()),
            schema=_table_schema_cols(schema),
        )

    # left-deep join tree in FROM order; each new table must be linked
    # to the prefix by exactly one equi-join condition
    order = [tr.alias for tr in stmt.tables]
    node = accesses[order[0]]
    in_prefix = {order[0]}
    point_prefix = _has_pk_equality(aliases[order[0]], accesses[order[0]].pred)
    conds = list(resolved.join_conds)
    for alias in order[1:]:
        match = None
        for cond in conds:
            (la, lattr), (ra, rattr) = cond
            if la in in_prefix and ra == alias:
                match = ((la, lattr), (ra, rattr))
            elif ra in in_prefix and la == alias:
                match = ((ra, rattr), (la, lattr))
            if match:
                conds.remove(cond)
                break
        if match is None:
            raise PlanError(f"no join condition linking table {alias}")
        (oa, oattr), (ia, iattr) = match
        outer_key = (alias_to_table[oa], oattr)
        inner_key = (alias_to_table[ia], iattr)
        inner = accesses[alias]
        inner_schema = aliases[alias]

        if join_method is not None:
            method = join_method
        elif (
            inner_schema.primary_key == iattr
            and point_prefix
        ):
            method = "inl"
        else:
            method = "hash"

        build_is_outer = False
        if method in ("hash", "qid") and isinstance(node, AccessPlan):
            outer_rows = stats.get(node.table, 0)
            inner_rows = stats.get(inner.table, 0)
            build_is_outer = outer_rows < inner_rows
        if method == "inl" and inner_schema.primary_key != iattr:
            raise PlanError(
                f"index join needs the primary key of {inner.table}, got {iattr}"
            )

        node = JoinPlan(
            outer=node,
            inner=inner,
            method=method,
            outer_key=outer_key,
            inner_key=inner_key,
            build_is_outer=build_is_outer,
            schema=node.schema + inner.schema,
        )
        in_prefix.add(alias)
        point_prefix = point_prefix and _has_pk_equality(inner_schema, inner.pred)
    if conds:
        raise PlanError(f"unused join condition {conds[0]}")

    sel = stmt

    def agg_lineage(term):
        return None if term.arg is None else lineage(term.arg)

    if sel.group_by:
        keys = tuple(lineage(c) for c in sel.group_by)
        aggs = tuple(
            (i.func, agg_lineage(i))
            for i in resolved.output_items
            if isinstance(i, AggTerm)
        )
        having = []
        for h in sel.having:
            if isinstance(h.term, AggTerm):
                term = ("agg", h.term.func, agg_lineage(h.term))
                if term[1:] not in [(f, a) for f, a in aggs]:
                    aggs = aggs + ((h.term.func, agg_lineage(h.term)),)
            else:
                term = ("key", lineage(h.term))
            having.append((term, h.op, h.operand))
        schema = keys + tuple(("", f"agg{i}") for i in range(len(aggs)))
        node = GroupByPlan(
            child=node, keys=keys, aggs=aggs, having=tuple(having), schema=schema
        )

    if sel.order_by is not None:
        key = lineage(sel.order_by.column)
        node = SortPlan(
            child=node,
            key=key,
            desc=sel.order_by.desc,
            limit=sel.limit,
            schema=node.schema,
        )

    # projection indexes into the final stream schema
    if sel.group_by:
        keys = node.keys if isinstance(node, GroupByPlan) else node.child.keys
        aggs = node.aggs if isinstance(node, GroupByPlan) else node.child.aggs
        projection = []
        for item in resolved.output_items:
            if isinstance(item, AggTerm):
                projection.append(len(keys) + aggs.index((item.func, agg_lineage(item))))
            else:
                projection.append(keys.index(lineage(item)))
    else:
        cols = list(node.schema)
        projection = [cols.index(lineage(ref)) for ref in resolved.output_items]
    return OutputPlan(
        child=node,
        projection=tuple(projection),
        labels=resolved.output_names,
        ordered=sel.order_by is not None,
    )


# -- global plan -----------------------------------------------------------------


@dataclass
class PlanNode:
    node_id: int
    kind: str  # access | hashjoin | qidjoin | inljoin | sort | groupby | output
    identity: tuple
    config: dict = field(default_factory=dict)

    def label(self):
        if self.kind == "access":
            return f"access {self.identity[1]}"
        if self.kind in ("hashjoin", "qidjoin"):
            (bt, ba), (pt, pa) = self.identity[1], self.identity[2]
            return f"{self.kind} build={bt}.{ba} probe={pt}.{pa}"
        if self.kind == "inljoin":
            (it, ia), (pt, pa) = self.identity[1], self.identity[2]
            return f"inljoin index={it}.{ia} outer={pt}.{pa}"
        if self.kind == "sort":
            (t, a), desc = self.identity[1], self.identity[2]
            return f"sort {t}.{a} {'desc' if desc else 'asc'}"
        if self.kind == "groupby":
            keys = ", ".join(f"{t}.{a}" for t, a in self.identity[1])
            return f"groupby [{keys}]"
        return self.kind


@dataclass(frozen=True)
class PlanEdge:
    edge_id: int
    src: int
    dst: int
    role: str  # probe | build | input | probe_res
    schema: tuple  # lineage columns carried on this edge


@dataclass(frozen=True)
class PathStep:
    """One node activation in a statement's path template.

    in_edge is the edge carrying this query's main stream into the
    node (None for sources), out_edge the edge its results leave on
    (None at the output sink).  config holds the statement-local
    template for this node; assign_path binds it per instance.
    """

    node_id: int
    in_edge: object
    out_edge: object
    config: dict


@dataclass(frozen=True)
class PathTemplate:
    statement_id: int
    prepared: object
    steps: tuple  # PathStep, topological order (side branches first)
    write: object  # WritePlan or None
    logical: object  # the statement's own LogicalPlan tree


@dataclass(frozen=True)
class QueryPath:
    """A PathTemplate instantiated with one query's bound parameters."""

    qid: int
    snapshot: int
    template: PathTemplate
    bound: dict  # node_id -> bound per-node config


class GlobalPlan:
    """The single always-on operator DAG shared by the whole workload."""

    def __init__(self, catalog, stats=None):
        self.catalog = catalog
        self.stats = dict(stats or {})
        self.nodes = []
        self.edges = []
        self.templates = {}  # statement_id -> PathTemplate
        self._node_ids = {}  # identity -> node_id
        self._edge_ids = {}  # (src, dst, role, schema) -> edge_id
        self._output = self._ensure_node("output", ("output",))

    # --- construction

    def _ensure_node(self, kind, identity, **config):
        if identity in self._node_ids:
            return self.nodes[self._node_ids[identity]]
        node = PlanNode(len(self.nodes), kind, identity, dict(config))
        self.nodes.append(node)
        self._node_ids[identity] = node.node_id
        return node

    def _ensure_edge(self, src, dst, role, schema):
        key = (src, dst, role, schema)
        if key in self._edge_ids:
            return self.edges[self._edge_ids[key]]
        edge = PlanEdge(len(self.edges), src, dst, role, schema)
        self.edges.append(edge)
        self._edge_ids[key] = edge.edge_id
        return edge

    def node(self, node_id):
        return self.nodes[node_id]

    def edge(self, edge_id):
        return self.edges[edge_id]

    def operator_nodes(self):
        return [n for n in self.nodes if n.kind not in ("access", "output")]

    def access_nodes(self):
        return [n for n in self.nodes if n.kind == "access"]

    def register(self, prepared, join_method=None):
        """Merge one prepared statement into the plan; returns its template.

        Idempotent per statement_id; re-registering an identical
        statement shape adds no nodes.
        """
        if prepared.statement_id in self.templates:
            return self.templates[prepared.statement_id]
        logical = compile_single(prepared.resolved, self.stats, join_method)
        if isinstance(logical, WritePlan):
            self._ensure_node("access", ("access", logical.table), table=logical.table)
            template = PathTemplate(
                statement_id=prepared.statement_id,
                prepared=prepared,
                steps=(),
                write=logical,
                logical=logical,
            )
        else:
            steps = self._register_select(logical)
            template = PathTemplate(
                statement_id=prepared.statement_id,
                prepared=prepared,
                steps=tuple(steps),
                write=None,
                logical=logical,
            )
        self.templates[prepared.statement_id] = template
        return template

    def _access_node(self, table):
        return self._ensure_node("access", ("access", table), table=table)

    def _register_select(self, logical):
        steps = []
        stream = logical.child

        def register_stream(plan, consumer_id, role):
            """Wire plan's output into consumer; returns the edge used."""
            if isinstance(plan, AccessPlan):
                node = self._access_node(plan.table)
                edge = self._ensure_edge(node.node_id, consumer_id, role, plan.schema)
                steps.append(
                    PathStep(node.node_id, None, edge.edge_id, {"pred": plan.pred})
                )
                return edge
            if isinstance(plan, JoinPlan):
                node, in_edge, lane_extra = register_join(plan)
                edge = self._ensure_edge(node.node_id, consumer_id, role, plan.schema)
                lane = {"in": in_edge.edge_id, "out": edge.edge_id, **lane_extra}
                self._add_lane(node, lane)
                cfg = {"lane": (in_edge.edge_id, edge.edge_id)}
                if plan.method == "inl":
                    cfg["inner_pred"] = plan.inner.pred
                steps.append(PathStep(node.node_id, in_edge.edge_id, edge.edge_id, cfg))
                return edge
            if isinstance(plan, SortPlan):
                node = self._ensure_node(
                    "sort", ("sort", plan.key, plan.desc), key=plan.key, desc=plan.desc
                )
                in_edge = register_stream(plan.child, node.node_id, "input")
                key_idx = plan.child.schema.index(plan.key)
                edge = self._ensure_edge(node.node_id, consumer_id, role, plan.schema)
                self._add_lane(
                    node, {"in": in_edge.edge_id, "out": edge.edge_id, "key_idx": key_idx}
                )
                steps.append(
                    PathStep(
                        node.node_id,
                        in_edge.edge_id,
                        edge.edge_id,
                        {"lane": (in_edge.edge_id, edge.edge_id), "limit": plan.limit},
                    )
                )
                return edge
            if isinstance(plan, GroupByPlan):
                node = self._ensure_node("groupby", ("groupby", plan.keys), keys=plan.keys)
                in_edge = register_stream(plan.child, node.node_id, "input")
                slots = node.config.setdefault("agg_slots", [])
                for agg in plan.aggs:
                    if agg not in slots:
                        slots.append(agg)
                child_cols = list(plan.child.schema)
                key_idxs = tuple(child_cols.index(k) for k in plan.keys)
                edge = self._ensure_edge(node.node_id, consumer_id, role, plan.schema)
                self._add_lane(
                    node,
                    {"in": in_edge.edge_id, "out": edge.edge_id, "key_idxs": key_idxs},
                )
                steps.append(
                    PathStep(
                        node.node_id,
                        in_edge.edge_id,
                        edge.edge_id,
                        {
                            "lane": (in_edge.edge_id, edge.edge_id),
                            "aggs": plan.aggs,
                            "having": plan.having,
                            "key_count": len(plan.keys),
                        },
                    )
                )
                return edge
            raise PlanError(f"cannot register {plan!r}")

        def register_join(plan):
            """Create/find the join node and wire both inputs.

            Returns (node, main-stream in-edge, per-lane fields): the
            probe key's column index within the in-edge schema, and for
            hash/qid joins whether the build side is the logical outer
            (so result assembly puts build values first).
            """
            if plan.method == "inl":
                identity = ("inljoin", plan.inner_key, plan.outer_key)
                node = self._ensure_node(
                    "inljoin",
                    identity,
                    table=plan.inner.table,
                    key_attr=plan.inner_key[1],
                )
                table_node = self._access_node(plan.inner.table)
                res = self._ensure_edge(
                    table_node.node_id, node.node_id, "probe_res", plan.inner.schema
                )
                node.config["probe_res"] = res.edge_id
                links = table_node.config.setdefault("probe_links", [])
                if node.node_id not in links:
                    links.append(node.node_id)
                probe_edge = register_stream(plan.outer, node.node_id, "probe")
                extra = {"probe_key_idx": plan.outer.schema.index(plan.outer_key)}
                return node, probe_edge, extra

            kind = "hashjoin" if plan.method == "hash" else "qidjoin"
            if plan.build_is_outer:
                build_plan, probe_plan = plan.outer, plan.inner
                build_key, probe_key = plan.outer_key, plan.inner_key
            else:
                build_plan, probe_plan = plan.inner, plan.outer
                build_key, probe_key = plan.inner_key, plan.outer_key
            identity = (kind, build_key, probe_key)
            node = self._ensure_node(kind, identity, build_key=build_key)
            build_edge = register_stream(build_plan, node.node_id, "build")
            node.config["build_edge"] = build_edge.edge_id
            node.config["build_key_idx"] = build_plan.schema.index(build_key)
            probe_edge = register_stream(probe_plan, node.node_id, "probe")
            extra = {
                "probe_key_idx": probe_plan.schema.index(probe_key),
                "build_first": plan.build_is_outer,
            }
            return node, probe_edge, extra

        out_node = self._output
        in_edge = register_stream(stream, out_node.node_id, "input")
        steps.append(
            PathStep(
                out_node.node_id,
                in_edge.edge_id,
                None,
                {
                    "projection": logical.projection,
                    "labels": logical.labels,
                    "ordered": logical.ordered,
                },
            )
        )
        return steps

    def _add_lane(self, node, lane):
        lanes = node.config.setdefault("lanes", [])
        if lane not in lanes:
            lanes.append(lane)

    # --- per-instance binding

    def assign_path(self, instance):
        """Instantiate the statement's template with bound parameters."""
        template = self.templates.get(instance.prepared.statement_id)
        if template is None:
            raise PlanError(
                f"statement {instance.prepared.statement_id} not registered"
            )
        params = instance.params
        bound = {}
        for step in template.steps:
            node = self.nodes[step.node_id]
            cfg = {}
            if node.kind == "access":
                pred = step.config["pred"].bind(params)
                cfg["pred"] = pred.resolve(self.catalog[node.config["table"]])
            elif node.kind == "inljoin":
                inner = step.config["inner_pred"].bind(params)
                cfg["inner_pred"] = inner.resolve(self.catalog[node.config["table"]])
                cfg["lane"] = step.config["lane"]
            elif node.kind == "sort":
                cfg["lane"] = step.config["lane"]
                cfg["limit"] = step.config["limit"]
            elif node.kind == "groupby":
                cfg["lane"] = step.config["lane"]
                cfg["aggs"] = step.config["aggs"]
                cfg["key_count"] = step.config["key_count"]
                cfg["having"] = tuple(
                    (term, op, params[v.slot] if isinstance(v, Param) else v)
                    for term, op, v in step.config["having"]
                )
            elif node.kind in ("hashjoin", "qidjoin"):
                cfg["lane"] = step.config["lane"]
            elif node.kind == "output":
                cfg.update(step.config)
            bound[step.node_id] = cfg
        return QueryPath(
            qid=instance.qid,
            snapshot=instance.snapshot,
            template=template,
            bound=bound,
        )

    def build_write_op(self, instance):
        """Turn a bound write instance into a storage write op."""
        from cycledb.storage import DeleteOp, InsertOp, UpdateOp

        template = self.templates.get(instance.prepared.statement_id)
        if template is None or template.write is None:
            raise PlanError("not a registered write statement")
        w = template.write
        params = instance.params

        def value(v):
            return params[v.slot] if isinstance(v, Param) else v

        schema = self.catalog[w.table]
        if w.kind == "INSERT":
            return InsertOp(w.table, tuple(value(v) for v in w.values))
        pred = w.pred.bind(params).resolve(schema) if w.pred.atoms else None
        if w.kind == "UPDATE":
            assignments = tuple((i, value(v)) for i, v in w.assignments)
            return UpdateOp(w.table, assignments, pred)
        return DeleteOp(w.table, pred)

    # --- validation and description

    def check_acyclic(self):
        """Toposort over data edges; raises PlanError on a cycle."""
        indeg = {n.node_id: 0 for n in self.nodes}
        out = {n.node_id: [] for n in self.nodes}
        for e in self.edges:
            indeg[e.dst] += 1
            out[e.src].append(e.dst)
        ready = [n for n, d in indeg.items() if d == 0]
        seen = 0
        while ready:
            n = ready.pop()
            seen += 1
            for m in out[n]:
                indeg[m] -= 1
                if indeg[m] == 0:
                    ready.append(m)
        if seen != len(self.nodes):
            raise PlanError("plan graph has a cycle")
        return True

    def describe(self):
        """Structured text dump of nodes, edges, and path templates."""
        lines = ["nodes:"]
        for n in self.nodes:
            lines.append(f"  n{n.node_id}: {n.label()}")
        lines.append("edges:")
        for e in self.edges:
            cols = ", ".join(f"{t}.{a}" if t else a for t, a in e.schema)
            lines.append(f"  e{e.edge_id}: n{e.src} -> n{e.dst} [{e.role}] ({cols})")
        lines.append("paths:")
        for sid in sorted(self.templates):
            t = self.templates[sid]
            if t.write is not None:
                lines.append(f"  s{sid}: write {t.write.kind} {t.write.table}")
                continue
            hops = " -> ".join(f"n{s.node_id}" for s in t.steps)
            lines.append(f"  s{sid}: {hops}")
        return "\n".join(lines)


# -- sharing analysis -------------------------------------------------------------


_COST = {
    "linear": lambda n: float(n),
    "nlogn": lambda n: n * math.log2(n) if n > 1 else 0.0,
}


@dataclass(frozen=True)
class SharingEntry:
    f: str
    o: int
    ns: tuple
    shared_cost: float
    separate_cost: float

    @property
    def benefit(self):
        return self.shared_cost < self.separate_cost


def sharing_benefit(f, o, ns):
    """Would one shared pass over o tuples beat per-query passes over ns?

    True iff f(o) < sum(f(n) for n in ns); with linear work that is
    simply o < sum(ns), so sharing wins whenever inputs overlap at all.
    """
    if f not in _COST:
        raise PlanError(f"unknown complexity class {f}")
    ns = tuple(int(n) for n in ns)
    o = int(o)
    if o < 0 or any(n < 0 for n in ns):
        raise PlanError("counts must be non-negative")
    if o > sum(ns):
        raise PlanError(f"shared input {o} exceeds sum of per-query inputs {sum(ns)}")
    cost = _COST[f]
    return SharingEntry(
        f=f,
        o=o,
        ns=ns,
        shared_cost=cost(o),
        separate_cost=sum(cost(n) for n in ns),
    )
