"""Catalog construction: per-column profiles, conditioned statistics families,
clustering into groups, Bloom indexes, and key/foreign-key precomputation.

For every declared join column the builder stores a compressed cumulative
profile of the whole column, and for every (join column, filter column)
pair a family of conditioned profiles:

* equality: one profile per most-common filter value, clustered into
  groups whose representative dominates every member, plus a Bloom filter
  per group for membership probes and a shared default profile covering
  all remaining values;
* range (numeric filters): nested equi-depth histogram levels whose
  buckets carry conditioned profiles, clustered the same way;
* substring (text filters): profiles keyed by the most common 3-grams.

Every compressed profile is audited against the exact sequence it stands
for before it enters the catalog.
"""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .bloom import BloomFilter, value_to_bytes
from .compress import CompressionConfig, is_valid_compression, valid_compress
from .pwfn import (
    DegreeSequence,
    PiecewiseLinearFn,
    pw_max,
    sample_integer_ranks,
    zero_cumulative,
)
from .relation import ColumnRole, Column, ConfigError, PkFkDeclaration, Relation

__all__ = [
    "BuildParams",
    "StatsBuildError",
    "SequenceGroup",
    "EqualityStats",
    "HistogramLevel",
    "RangeStats",
    "LikeStats",
    "RelationStats",
    "PkFkEdge",
    "StatisticsCatalog",
    "make_build_params",
    "extract_degree_sequence",
    "cluster_sequence_groups",
    "build_equality_stats",
    "build_range_stats",
    "build_like_stats",
    "lookup_range_group",
    "precompute_pk_fk",
    "build_catalog",
]

GRAM_LEN = 3


class StatsBuildError(RuntimeError):
    """A build-time audit or integrity check failed."""


@dataclass(frozen=True)
class BuildParams:
    """Catalog build knobs and their defaults."""

    compression_budget: float = 0.01
    hist_depth: int = 7
    mcv_size: int = 1000
    clusters: int | str = "auto"
    bloom_bits: int = 12
    max_segments: int | None = None

    def __post_init__(self) -> None:
        if self.compression_budget <= 0.0:
            raise ConfigError("compression_budget must be positive")
        if self.hist_depth < 1:
            raise ConfigError("hist_depth must be at least 1")
        if self.mcv_size < 0:
            raise ConfigError("mcv_size must be non-negative")
        if isinstance(self.clusters, str):
            if self.clusters != "auto":
                raise ConfigError("clusters must be an integer or 'auto'")
        elif self.clusters < 1:
            raise ConfigError("clusters must be at least 1")
        if self.bloom_bits < 1:
            raise ConfigError("bloom_bits must be at least 1")

    def compression(self) -> CompressionConfig:
        return CompressionConfig(self.compression_budget, self.max_segments)


_PARAM_KEYS = {
    "compression_budget",
    "hist_depth",
    "mcv_size",
    "clusters",
    "bloom_bits",
    "max_segments",
}


def make_build_params(raw: dict) -> BuildParams:
    unknown = set(raw) - _PARAM_KEYS
    if unknown:
        raise ConfigError("unknown build parameters: %s" % ", ".join(sorted(unknown)))
    try:
        return BuildParams(**raw)
    except TypeError as exc:
        raise ConfigError("bad build parameters: %s" % exc) from exc


@dataclass(frozen=True)
class SequenceGroup:
    """A cluster of conditioned profiles sharing one dominating representative."""

    members: tuple
    representative: PiecewiseLinearFn
    bloom: BloomFilter | None = None


@dataclass(frozen=True)
class EqualityStats:
    groups: tuple[SequenceGroup, ...]
    default: PiecewiseLinearFn


@dataclass(frozen=True)
class HistogramLevel:
    cuts: tuple[float, ...]
    bucket_groups: tuple[int, ...]


@dataclass(frozen=True)
class RangeStats:
    levels: tuple[HistogramLevel, ...]
    groups: tuple[SequenceGroup, ...]
    root: PiecewiseLinearFn


@dataclass(frozen=True)
class LikeStats:
    gram_groups: dict[str, int]
    groups: tuple[SequenceGroup, ...]
    default: PiecewiseLinearFn


@dataclass
class RelationStats:
    name: str
    cardinality: int
    column_kinds: dict[str, str]
    join_columns: tuple[str, ...]
    filter_columns: tuple[str, ...]
    fallback: dict[str, PiecewiseLinearFn]
    equality: dict[tuple[str, str], EqualityStats]
    range: dict[tuple[str, str], RangeStats]
    like: dict[tuple[str, str], LikeStats]


@dataclass(frozen=True)
class PkFkEdge:
    fact: str
    fk: str
    dim: str
    pk: str
    propagated: dict[str, str] = field(default_factory=dict)


@dataclass
class StatisticsCatalog:
    params: BuildParams
    relations: dict[str, RelationStats]
    pkfk: tuple[PkFkEdge, ...] = ()


def _nonnull_mask(rel: Relation, column: str) -> np.ndarray:
    data = rel.data[column]
    if isinstance(data, np.ndarray):
        return ~np.isnan(data)
    return np.array([v is not None for v in data], dtype=bool)


def extract_degree_sequence(
    rel: Relation, column: str, rows: np.ndarray | None = None
) -> DegreeSequence:
    """Degree sequence of a column restricted to the given row indices
    (all rows when omitted); nulls are dropped, they never join."""
    data = rel.data[column]
    if isinstance(data, np.ndarray):
        vals = data if rows is None else data[rows]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            return DegreeSequence(())
        _, counts = np.unique(vals, return_counts=True)
        return DegreeSequence(sorted(counts.tolist(), reverse=True))
    if rows is None:
        it = data
    else:
        it = (data[i] for i in rows.tolist())
    counts_map: dict[str, int] = defaultdict(int)
    for v in it:
        if v is not None:
            counts_map[v] += 1
    return DegreeSequence(sorted(counts_map.values(), reverse=True))


def _audited_profile(
    rel: Relation, column: str, rows: np.ndarray | None, params: BuildParams
) -> PiecewiseLinearFn:
    seq = extract_degree_sequence(rel, column, rows)
    fn = valid_compress(seq, params.compression())
    report = is_valid_compression(seq, fn)
    if not report.ok:
        raise StatsBuildError(
            "compression audit failed for %s.%s: %s" % (rel.name, column, report.reason)
        )
    return fn


def _cluster_count(policy: int | str, n_members: int) -> int:
    if isinstance(policy, str):
        return min(n_members, max(4, math.ceil(n_members / 8)))
    return min(n_members, policy)


def cluster_sequence_groups(
    fns: list[PiecewiseLinearFn], n_groups: int
) -> list[list[int]]:
    """Complete-linkage agglomerative clustering of cumulative profiles.

    Returns member-index clusters, each sorted, ordered by smallest member.
    Zero-mass profiles have no defined pairwise distance and are collected
    into a cluster of their own.
    """
    n = len(fns)
    if n == 0:
        return []
    zero = [i for i in range(n) if fns[i].total <= 1e-12]
    live = [i for i in range(n) if fns[i].total > 1e-12]
    clusters: list[list[int]] = []
    if zero:
        clusters.append(zero)
        n_groups = max(1, n_groups - 1)
    if live:
        if len(live) <= n_groups:
            clusters.extend([i] for i in live)
        else:
            clusters.extend(_agglomerate(fns, live, n_groups))
    return sorted(clusters, key=lambda c: c[0])


def _agglomerate(
    fns: list[PiecewiseLinearFn], live: list[int], n_groups: int
) -> list[list[int]]:
    m = len(live)
    upto = int(np.ceil(max(fns[i].end for i in live)))
    grid = np.stack([sample_integer_ranks(fns[i], upto) for i in live])
    drops = np.diff(grid, axis=1)
    sq = np.einsum("ij,ij->i", drops, drops)
    dist = np.empty((m, m), dtype=np.float64)
    block = max(1, int(2_000_000 // max(1, m * upto)))
    for lo in range(0, m, block):
        hi = min(m, lo + block)
        pairwise = np.maximum(drops[lo:hi, None, :], drops[None, :, :])
        msq = np.einsum("bij,bij->bi", pairwise, pairwise)
        dist[lo:hi] = msq / sq[lo:hi, None] + msq / sq[None, :]
    np.fill_diagonal(dist, np.inf)
    members: dict[int, list[int]] = {i: [live[i]] for i in range(m)}
    remaining = m
    while remaining > n_groups:
        flat = int(np.argmin(dist))
        i, j = divmod(flat, m)
        if i > j:
            i, j = j, i
        members[i].extend(members.pop(j))
        merged = np.maximum(dist[i], dist[j])
        dist[i, :] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        remaining -= 1
    return [sorted(c) for c in members.values()]


def _audit_representative(
    rep: PiecewiseLinearFn, member_fns: list[PiecewiseLinearFn], context: str
) -> None:
    upto = int(np.ceil(rep.end))
    rep_grid = sample_integer_ranks(rep, upto)
    for fn in member_fns:
        grid = sample_integer_ranks(fn, upto)
        if np.any(rep_grid + 1e-9 * np.maximum(1.0, grid) < grid):
            raise StatsBuildError("representative fails to dominate a member (%s)" % context)


def _build_groups(
    members: list[tuple[object, PiecewiseLinearFn]],
    params: BuildParams,
    with_bloom: bool,
    context: str,
) -> tuple[tuple[SequenceGroup, ...], dict[object, int]]:
    if not members:
        return (), {}
    fns = [fn for _, fn in members]
    n_groups = _cluster_count(params.clusters, len(members))
    clusters = cluster_sequence_groups(fns, n_groups)
    groups: list[SequenceGroup] = []
    key_to_group: dict[object, int] = {}
    for cluster in clusters:
        member_fns = [fns[i] for i in cluster]
        rep = pw_max(member_fns)
        _audit_representative(rep, member_fns, context)
        keys = tuple(members[i][0] for i in cluster)
        bloom = None
        if with_bloom:
            bloom = BloomFilter.build(
                (value_to_bytes(k) for k in keys), params.bloom_bits
            )
        for k in keys:
            key_to_group[k] = len(groups)
        groups.append(SequenceGroup(keys, rep, bloom))
    return tuple(groups), key_to_group


def _rows_by_value(rel: Relation, column: str) -> dict:
    data = rel.data[column]
    rows: dict = defaultdict(list)
    if isinstance(data, np.ndarray):
        for i, v in enumerate(data.tolist()):
            if v == v:  # skip NaN
                rows[v].append(i)
    else:
        for i, v in enumerate(data):
            if v is not None:
                rows[v].append(i)
    return {k: np.asarray(v, dtype=np.intp) for k, v in rows.items()}


def build_equality_stats(
    rel: Relation, join_col: str, filter_col: str, params: BuildParams
) -> EqualityStats:
    by_value = _rows_by_value(rel, filter_col)
    ordered = sorted(by_value.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    mcv = ordered[: params.mcv_size]
    rest = ordered[params.mcv_size :]
    members = [
        (value, _audited_profile(rel, join_col, rows, params)) for value, rows in mcv
    ]
    context = "%s.%s | %s =" % (rel.name, join_col, filter_col)
    groups, _ = _build_groups(members, params, with_bloom=True, context=context)
    if rest:
        default = _tree_max(
            [_audited_profile(rel, join_col, rows, params) for _, rows in rest]
        )
    else:
        default = zero_cumulative()
    return EqualityStats(groups, default)


def _tree_max(fns: list[PiecewiseLinearFn]) -> PiecewiseLinearFn:
    while len(fns) > 1:
        fns = [pw_max(fns[i : i + 8]) for i in range(0, len(fns), 8)]
    return fns[0]


def _equi_depth_cuts(values: np.ndarray, parts: int) -> list[float]:
    uniq, counts = np.unique(values, return_counts=True)
    if uniq.size < 2:
        return []
    cum = np.cumsum(counts)
    total = int(cum[-1])
    cuts: list[float] = []
    for j in range(1, parts):
        target = j * total / parts
        idx = int(np.searchsorted(cum, target, side="left"))
        if idx + 1 < uniq.size:
            cut = float(uniq[idx + 1])
            if not cuts or cut > cuts[-1]:
                cuts.append(cut)
    return cuts


def build_range_stats(
    rel: Relation,
    join_col: str,
    filter_col: str,
    params: BuildParams,
    root: PiecewiseLinearFn,
) -> RangeStats:
    data = rel.data[filter_col]
    if not isinstance(data, np.ndarray):
        raise StatsBuildError("range statistics need a numeric filter column")
    mask = ~np.isnan(data)
    values = data[mask]
    row_ids = np.nonzero(mask)[0]
    if values.size == 0:
        return RangeStats((), (), root)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    sorted_rows = row_ids[order]
    finest = _equi_depth_cuts(values, 2 ** params.hist_depth)
    level_cuts: list[list[float]] = []
    cuts = finest
    while cuts:
        level_cuts.append(cuts)
        cuts = cuts[1::2]
    members: list[tuple[object, PiecewiseLinearFn]] = []
    level_keys: list[list[tuple[int, int]]] = []
    for li, lc in enumerate(level_cuts):
        bounds = np.searchsorted(sorted_vals, np.asarray(lc), side="left")
        starts = [0, *bounds.tolist()]
        ends = [*bounds.tolist(), sorted_vals.size]
        keys: list[tuple[int, int]] = []
        for bi, (s, e) in enumerate(zip(starts, ends)):
            key = (li, bi)
            rows = sorted_rows[s:e]
            members.append((key, _audited_profile(rel, join_col, rows, params)))
            keys.append(key)
        level_keys.append(keys)
    context = "%s.%s | %s range" % (rel.name, join_col, filter_col)
    groups, key_to_group = _build_groups(members, params, with_bloom=False, context=context)
    levels = tuple(
        HistogramLevel(tuple(lc), tuple(key_to_group[k] for k in keys))
        for lc, keys in zip(level_cuts, level_keys)
    )
    return RangeStats(levels, groups, root)


def lookup_range_group(
    stats: RangeStats, lo: float | None, hi: float | None, hi_incl: bool
) -> PiecewiseLinearFn:
    """Profile of the smallest histogram bucket fully containing [lo, hi];
    the unconditioned root profile when no bucket does."""
    lo_eff = lo if lo is not None else -math.inf
    hi_eff = hi if hi is not None else math.inf
    for level in stats.levels:
        cuts = level.cuts
        j = bisect.bisect_right(cuts, lo_eff)
        upper = cuts[j] if j < len(cuts) else math.inf
        if hi_eff < upper or (hi_eff == upper and not hi_incl):
            return stats.groups[level.bucket_groups[j]].representative
    return stats.root


def _grams(text: str) -> set[str]:
    low = text.lower()
    return {low[i : i + GRAM_LEN] for i in range(len(low) - GRAM_LEN + 1)}


def build_like_stats(
    rel: Relation, join_col: str, filter_col: str, params: BuildParams
) -> LikeStats:
    data = rel.data[filter_col]
    if isinstance(data, np.ndarray):
        raise StatsBuildError("substring statistics need a text filter column")
    gram_rows: dict[str, list[int]] = defaultdict(list)
    row_grams: list[set[str]] = []
    for i, v in enumerate(data):
        grams = _grams(v) if v is not None else set()
        row_grams.append(grams)
        for g in grams:
            gram_rows[g].append(i)
    ordered = sorted(gram_rows.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    mcv = ordered[: params.mcv_size]
    mcv_set = {g for g, _ in mcv}
    members = [
        (gram, _audited_profile(rel, join_col, np.asarray(rows, dtype=np.intp), params))
        for gram, rows in mcv
    ]
    context = "%s.%s | %s like" % (rel.name, join_col, filter_col)
    groups, key_to_group = _build_groups(members, params, with_bloom=False, context=context)
    # Rows whose text has grams, none of them tracked.  Gram-less rows
    # (null or shorter than a gram) can never match a pattern long enough
    # to consult these statistics, so they stay out of the default.
    uncovered = np.asarray(
        [i for i, grams in enumerate(row_grams) if grams and not (grams & mcv_set)],
        dtype=np.intp,
    )
    default = _audited_profile(rel, join_col, uncovered, params)
    return LikeStats({g: key_to_group[g] for g, _ in mcv}, groups, default)


def precompute_pk_fk(
    fact: Relation,
    dim: Relation,
    fk: str,
    pk: str,
    dim_filter_cols: tuple[str, ...],
) -> tuple[Relation, dict[str, str]]:
    """Push a dimension's filter columns down onto the fact table.

    The primary key must be unique and non-null.  Each fact row gets, for
    every dimension filter column, the value of its matching dimension row
    (null when the foreign key matches nothing).  Predicates on the
    dimension can then be evaluated against the fact's own statistics.
    """
    pk_data = dim.data[pk]
    index: dict = {}
    if isinstance(pk_data, np.ndarray):
        items = enumerate(pk_data.tolist())
        for i, v in items:
            if v != v:
                raise StatsBuildError("%s.%s: null in primary key" % (dim.name, pk))
            if v in index:
                raise StatsBuildError("%s.%s: duplicate primary key %r" % (dim.name, pk, v))
            index[v] = i
    else:
        for i, v in enumerate(pk_data):
            if v is None:
                raise StatsBuildError("%s.%s: null in primary key" % (dim.name, pk))
            if v in index:
                raise StatsBuildError("%s.%s: duplicate primary key %r" % (dim.name, pk, v))
            index[v] = i
    fk_data = fact.data[fk]
    if isinstance(fk_data, np.ndarray):
        matches = [index.get(v) if v == v else None for v in fk_data.tolist()]
    else:
        matches = [index.get(v) if v is not None else None for v in fk_data]
    columns = list(fact.columns)
    data = dict(fact.data)
    propagated: dict[str, str] = {}
    for col in dim_filter_cols:
        prop = "__%s__%s" % (dim.name, col)
        if fact.has_column(prop):
            raise StatsBuildError("propagated column name %r collides" % prop)
        kind = dim.kind_of(col)
        src = dim.data[col]
        if kind == "numeric":
            out = np.full(fact.n_rows, np.nan)
            for i, m in enumerate(matches):
                if m is not None:
                    out[i] = src[m]
            data[prop] = out
        else:
            data[prop] = [src[m] if m is not None else None for m in matches]
        columns.append(Column(prop, kind))
        propagated[col] = prop
    return Relation(fact.name, columns, data, fact.n_rows), propagated


def build_catalog(
    relations: dict[str, Relation],
    roles: dict[str, ColumnRole],
    pkfk: tuple[PkFkDeclaration, ...] = (),
    params: BuildParams | None = None,
) -> StatisticsCatalog:
    """Build the full statistics catalog for a workspace."""
    params = params or BuildParams()
    for name, role in roles.items():
        rel = relations[name]
        for c in role.join_columns + role.filter_columns:
            if not rel.has_column(c):
                raise ConfigError("relation %r: role names unknown column %r" % (name, c))
    work = dict(relations)
    work_roles = dict(roles)
    edges: list[PkFkEdge] = []
    for decl in pkfk:
        fact = work[decl.fact]
        dim = work[decl.dim]
        new_fact, propagated = precompute_pk_fk(
            fact, dim, decl.fk, decl.pk, roles[decl.dim].filter_columns
        )
        work[decl.fact] = new_fact
        old = work_roles[decl.fact]
        work_roles[decl.fact] = ColumnRole(
            old.join_columns, old.filter_columns + tuple(propagated.values())
        )
        edges.append(PkFkEdge(decl.fact, decl.fk, decl.dim, decl.pk, propagated))
    rel_stats: dict[str, RelationStats] = {}
    for name in sorted(work):
        rel = work[name]
        role = work_roles[name]
        fallback = {
            col.name: _audited_profile(rel, col.name, None, params)
            for col in rel.columns
        }
        equality: dict[tuple[str, str], EqualityStats] = {}
        range_: dict[tuple[str, str], RangeStats] = {}
        like: dict[tuple[str, str], LikeStats] = {}
        for j in role.join_columns:
            for f in role.filter_columns:
                equality[(j, f)] = build_equality_stats(rel, j, f, params)
                if rel.kind_of(f) == "numeric":
                    range_[(j, f)] = build_range_stats(rel, j, f, params, fallback[j])
                else:
                    like[(j, f)] = build_like_stats(rel, j, f, params)
        rel_stats[name] = RelationStats(
            name=name,
            cardinality=rel.n_rows,
            column_kinds={c.name: c.kind for c in rel.columns},
            join_columns=role.join_columns,
            filter_columns=role.filter_columns,
            fallback=fallback,
            equality=equality,
            range=range_,
            like=like,
        )
    return StatisticsCatalog(params, rel_stats, tuple(edges))
