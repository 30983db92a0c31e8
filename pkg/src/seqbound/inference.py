"""Cardinality bound inference over a statistics catalog.

Given a parsed query, the engine conditions every join column's cumulative
profile on the predicates of its relation occurrence, rewrites the query
where structure allows (dimension predicates pushed across declared
key/foreign-key joins, parallel join edges fused, cyclic shapes reduced to
spanning trees), plans each acyclic shape bottom-up, and evaluates the
plan with the piecewise kernel.  The reported count is a guaranteed upper
bound on the query's true result size under the statistics' view of the
data.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

from .bloom import value_to_bytes
from .pwfn import (
    PiecewiseConstantFn,
    PiecewiseLinearFn,
    cumulate,
    compose_ranks,
    discrete_derivative,
    pw_max,
    pw_min,
    pw_multiply,
    pw_sum,
    restrict_domain,
    truncate_cumulative,
)
from .query import (
    And,
    Atom,
    BoundPlan,
    Eq,
    InSet,
    JoinStep,
    Like,
    MergeStep,
    Or,
    Predicate,
    Query,
    Range,
    UnsupportedQueryError,
    decompose,
    fuse_parallel_joins,
    join_graph,
    spanning_trees,
)
from .stats import (
    GRAM_LEN,
    RelationStats,
    StatisticsCatalog,
    lookup_range_group,
)

__all__ = ["BoundResult", "condition_sequence", "plan_bound", "bound_query"]

SPANNING_TREE_CAP = 64


@dataclass(frozen=True)
class BoundResult:
    bound: int
    value: float
    strategy: str
    notes: tuple[str, ...] = ()
    steps: tuple[str, ...] = ()


def _resolve_eq(rel: RelationStats, join_col: str, node: Eq) -> PiecewiseLinearFn | None:
    stats = rel.equality.get((join_col, node.column))
    if stats is None:
        return None
    probe = value_to_bytes(node.value)
    hits = [
        g.representative
        for g in stats.groups
        if g.bloom is not None and probe in g.bloom
    ]
    if hits:
        return pw_max(hits)
    return stats.default


def _resolve_like(rel: RelationStats, join_col: str, node: Like) -> PiecewiseLinearFn | None:
    stats = rel.like.get((join_col, node.column))
    if stats is None:
        return None
    literal = node.pattern.strip("%").lower()
    if len(literal) < GRAM_LEN:
        return None
    grams = {literal[i : i + GRAM_LEN] for i in range(len(literal) - GRAM_LEN + 1)}
    hits = [
        stats.groups[stats.gram_groups[g]].representative
        for g in sorted(grams)
        if g in stats.gram_groups
    ]
    if hits:
        return pw_min(hits)
    return stats.default


def condition_sequence(
    catalog: StatisticsCatalog,
    relation: str,
    join_col: str,
    predicate: Predicate | None,
) -> PiecewiseLinearFn:
    """Cumulative profile of a join column under a relation's predicate.

    Every resolution is an upper envelope of the profile of the rows that
    can satisfy the predicate, so the result is always safe to use in a
    bound; when no statistic applies the unconditioned profile is used.
    """
    rel = catalog.relations[relation]
    unconditioned = rel.fallback[join_col]

    def resolve(node: Predicate) -> PiecewiseLinearFn:
        if isinstance(node, Eq):
            found = _resolve_eq(rel, join_col, node)
            return unconditioned if found is None else found
        if isinstance(node, Range):
            stats = rel.range.get((join_col, node.column))
            if stats is None:
                return unconditioned
            return lookup_range_group(stats, node.lo, node.hi, node.hi_incl)
        if isinstance(node, Like):
            found = _resolve_like(rel, join_col, node)
            return unconditioned if found is None else found
        if isinstance(node, InSet):
            parts = [resolve(Eq(node.column, v)) for v in node.values]
            return pw_min([pw_sum(parts), unconditioned])
        if isinstance(node, And):
            return pw_min([resolve(c) for c in node.children])
        if isinstance(node, Or):
            return pw_min([pw_sum([resolve(c) for c in node.children]), unconditioned])
        raise TypeError("unknown predicate node %r" % (node,))

    if predicate is None:
        return unconditioned
    return resolve(predicate)


def plan_bound(
    plan: BoundPlan,
    profiles: dict[tuple[str, str], PiecewiseLinearFn],
) -> tuple[float, tuple[str, ...]]:
    """Evaluate a plan against per-(alias, variable) conditioned profiles.

    Join steps first clamp the anchor's and every child column's profile of
    the same atom to their common minimum mass (a row must be non-null in
    all of them to join), then multiply the anchor's frequency profile by
    each child's profile re-expressed in anchor ranks.  Merge steps multiply
    unary profiles after restricting them to the shortest domain.  The
    plan's value is the integral of the root profile.
    """
    values: dict[str, PiecewiseConstantFn] = {}
    trace: list[str] = []

    def fetch(uid: str) -> PiecewiseConstantFn:
        got = values.get(uid)
        if got is not None:
            return got
        alias, var = uid.split("/", 1)
        return discrete_derivative(profiles[(alias, var)])

    for step in plan.steps:
        if isinstance(step, MergeStep):
            fns = [fetch(i) for i in step.inputs]
            end = min(f.end for f in fns)
            out = functools.reduce(pw_multiply, (restrict_domain(f, end) for f in fns))
            trace.append(
                "%s: merge %s over %s -> integral %.6g"
                % (step.out, "*".join(step.inputs), step.var, cumulate(out).total)
            )
        else:
            anchor_fn = profiles[(step.alias, step.anchor)]
            child_fns = [profiles[(step.alias, var)] for var, _ in step.children]
            mass = min([anchor_fn.total, *(c.total for c in child_fns)])
            anchor_fn = truncate_cumulative(anchor_fn, mass)
            out = discrete_derivative(anchor_fn)
            for (var, uid), child_col in zip(step.children, child_fns):
                through = truncate_cumulative(child_col, mass)
                out = pw_multiply(out, compose_ranks(fetch(uid), through, anchor_fn))
            trace.append(
                "%s: join %s anchored at %s (mass %.6g) -> integral %.6g"
                % (step.out, step.alias, step.anchor, mass, cumulate(out).total)
            )
        values[step.out] = out
    root = values[plan.root] if plan.root in values else fetch(plan.root)
    return cumulate(root).total, tuple(trace)


def _rewrite_onto_fact(node: Predicate, mapping: dict[str, str]) -> Predicate | None:
    if isinstance(node, Eq):
        col = mapping.get(node.column)
        return None if col is None else Eq(col, node.value)
    if isinstance(node, Range):
        col = mapping.get(node.column)
        if col is None:
            return None
        return Range(col, node.lo, node.hi, node.lo_incl, node.hi_incl)
    if isinstance(node, Like):
        col = mapping.get(node.column)
        return None if col is None else Like(col, node.pattern)
    if isinstance(node, InSet):
        col = mapping.get(node.column)
        return None if col is None else InSet(col, node.values)
    if isinstance(node, And):
        kept = [r for r in (_rewrite_onto_fact(c, mapping) for c in node.children) if r is not None]
        if not kept:
            return None
        return kept[0] if len(kept) == 1 else And(tuple(kept))
    if isinstance(node, Or):
        kept = [_rewrite_onto_fact(c, mapping) for c in node.children]
        if any(k is None for k in kept):
            return None
        return Or(tuple(kept))
    raise TypeError("unknown predicate node %r" % (node,))


def _apply_pkfk(catalog: StatisticsCatalog, query: Query, notes: list[str]) -> Query:
    if not catalog.pkfk:
        return query
    predicates = dict(query.predicates)
    for edge in catalog.pkfk:
        for dim_atom in query.atoms:
            if dim_atom.relation != edge.dim:
                continue
            dim_pred = predicates.get(dim_atom.alias)
            if dim_pred is None:
                continue
            for fact_atom in query.atoms:
                if fact_atom.relation != edge.fact:
                    continue
                linked = any(
                    edge.fk in fact_atom.columns_for(v) and edge.pk in dim_atom.columns_for(v)
                    for v in set(fact_atom.variables()) & set(dim_atom.variables())
                )
                if not linked:
                    continue
                rewritten = _rewrite_onto_fact(dim_pred, edge.propagated)
                if rewritten is None:
                    continue
                existing = predicates.get(fact_atom.alias)
                predicates[fact_atom.alias] = (
                    rewritten if existing is None else And((existing, rewritten))
                )
                notes.append(
                    "pushed %s predicate across %s=%s onto %s"
                    % (dim_atom.alias, edge.fk, edge.pk, fact_atom.alias)
                )
    return Query(query.atoms, predicates)


def _ensure_join_vars(
    catalog: StatisticsCatalog, query: Query, notes: list[str]
) -> Query:
    atoms = []
    changed = False
    for atom in query.atoms:
        if atom.var_columns:
            atoms.append(atom)
            continue
        rel = catalog.relations[atom.relation]
        col = rel.join_columns[0] if rel.join_columns else sorted(rel.column_kinds)[0]
        atoms.append(
            Atom(atom.alias, atom.relation, (("_" + atom.alias, (col,)),))
        )
        notes.append("%s joins nothing; bounding it through column %s" % (atom.alias, col))
        changed = True
    if not changed:
        return query
    return Query(tuple(atoms), dict(query.predicates))


def _validate(catalog: StatisticsCatalog, query: Query) -> None:
    if not query.atoms:
        raise UnsupportedQueryError("query has no relations")
    for atom in query.atoms:
        rel = catalog.relations.get(atom.relation)
        if rel is None:
            raise UnsupportedQueryError("no statistics for relation %r" % atom.relation)
        for _, cols in atom.var_columns:
            for col in cols:
                if col not in rel.column_kinds:
                    raise UnsupportedQueryError(
                        "relation %r has no column %r" % (atom.relation, col)
                    )
        pred = query.predicates.get(atom.alias)
        if pred is not None:
            _validate_predicate(rel, atom, pred)


def _validate_predicate(rel: RelationStats, atom: Atom, node: Predicate) -> None:
    if isinstance(node, (And, Or)):
        for c in node.children:
            _validate_predicate(rel, atom, c)
        return
    if node.column not in rel.column_kinds:
        raise UnsupportedQueryError(
            "relation %r has no column %r" % (atom.relation, node.column)
        )


class _Conditioner:
    """Per-query cache of conditioned profiles and per-atom row caps."""

    def __init__(self, catalog: StatisticsCatalog, query: Query, notes: list[str]):
        self.catalog = catalog
        self.predicates = query.predicates
        self.notes = notes
        self.by_column: dict[tuple[str, str], PiecewiseLinearFn] = {}
        self.caps: dict[str, float] = {}

    def column_profile(self, atom: Atom, col: str) -> PiecewiseLinearFn:
        key = (atom.alias, col)
        got = self.by_column.get(key)
        if got is not None:
            return got
        rel = self.catalog.relations[atom.relation]
        pred = self.predicates.get(atom.alias)
        if col in rel.join_columns:
            fn = condition_sequence(self.catalog, atom.relation, col, pred)
        else:
            fn = truncate_cumulative(rel.fallback[col], self.atom_cap(atom))
            self.notes.append(
                "%s.%s is not a declared join column; capped its profile at the "
                "conditioned row count" % (atom.alias, col)
            )
        self.by_column[key] = fn
        return fn

    def atom_cap(self, atom: Atom) -> float:
        got = self.caps.get(atom.alias)
        if got is not None:
            return got
        rel = self.catalog.relations[atom.relation]
        if rel.join_columns:
            cap = min(self.column_profile(atom, j).total for j in rel.join_columns)
        else:
            cap = float(rel.cardinality)
        self.caps[atom.alias] = cap
        return cap

    def variable_profile(self, atom: Atom, var: str) -> PiecewiseLinearFn:
        cols = atom.columns_for(var)
        fns = [self.column_profile(atom, c) for c in cols]
        return fns[0] if len(fns) == 1 else pw_min(fns)


def bound_query(catalog: StatisticsCatalog, query: Query) -> BoundResult:
    """Upper-bound the COUNT(*) of a join query against the catalog."""
    _validate(catalog, query)
    notes: list[str] = []
    q = _apply_pkfk(catalog, query, notes)
    fused = fuse_parallel_joins(q)
    if fused is not q:
        notes.append("fused parallel join edges into multi-column variables")
    q = _ensure_join_vars(catalog, fused, notes)
    graph = join_graph(q)
    if not graph.connected:
        raise UnsupportedQueryError(
            "query is a cross product; every relation must join the rest"
        )
    if graph.acyclic:
        trees = (q,)
        strategy = "acyclic"
    else:
        trees = spanning_trees(q, SPANNING_TREE_CAP)
        strategy = "min-over-%d-spanning-trees" % len(trees)
    conditioner = _Conditioner(catalog, q, notes)
    best = math.inf
    best_steps: tuple[str, ...] = ()
    for idx, tree in enumerate(trees):
        plan = decompose(tree)
        profiles = {
            (atom.alias, var): conditioner.variable_profile(atom, var)
            for atom in tree.atoms
            for var in atom.variables()
        }
        value, steps = plan_bound(plan, profiles)
        if len(trees) > 1:
            notes.append("spanning tree %d/%d -> %.6g" % (idx + 1, len(trees), value))
        if value < best:
            best = value
            best_steps = steps
    # COUNT(*) of a lone relation includes rows whose carrier column is
    # null, which no profile can see; joins are unaffected because null
    # keys never match.
    if len(q.atoms) == 1 and all(v.startswith("_") for v in q.atoms[0].variables()):
        atom = q.atoms[0]
        rel = catalog.relations[atom.relation]
        carrier = atom.var_columns[0][1][0]
        nulls = max(0.0, float(rel.cardinality) - rel.fallback[carrier].total)
        if nulls > 0:
            best += nulls
            notes.append(
                "%s.%s has %g null row(s); added them to the bound" % (atom.alias, carrier, nulls)
            )
    # Counts are integers, so a value within float noise of an integer is
    # snapped to it: a genuinely fractional value can only cover integer
    # counts at or below its floor, so snapping never loses soundness,
    # while a plain ceil would inflate exact results by one.
    nearest = round(best)
    if abs(best - nearest) <= 1e-9 * max(1.0, abs(best)):
        bound = max(0, int(nearest))
    else:
        bound = max(0, math.ceil(best))
    return BoundResult(bound, best, strategy, tuple(notes), best_steps)
