import numpy as np
import pytest

from seqbound.bloom import value_to_bytes
from seqbound.pwfn import DegreeSequence, PiecewiseLinearFn, sample_integer_ranks
from seqbound.relation import Column, ColumnRole, ConfigError, PkFkDeclaration, Relation
from seqbound.stats import (
    BuildParams,
    StatsBuildError,
    build_catalog,
    build_equality_stats,
    build_like_stats,
    build_range_stats,
    cluster_sequence_groups,
    extract_degree_sequence,
    lookup_range_group,
    make_build_params,
    precompute_pk_fk,
)


def cum(freqs) -> PiecewiseLinearFn:
    knots = [0.0]
    values = [0.0]
    for i, f in enumerate(freqs, start=1):
        knots.append(float(i))
        values.append(values[-1] + f)
    return PiecewiseLinearFn(knots, values)


class TestBuildParams:
    def test_defaults(self):
        p = BuildParams()
        assert (p.compression_budget, p.hist_depth, p.mcv_size) == (0.01, 7, 1000)
        assert p.clusters == "auto"
        assert p.bloom_bits == 12

    def test_validation(self):
        with pytest.raises(ConfigError):
            BuildParams(compression_budget=-1)
        with pytest.raises(ConfigError):
            BuildParams(hist_depth=0)
        with pytest.raises(ConfigError):
            BuildParams(clusters="many")
        with pytest.raises(ConfigError):
            BuildParams(clusters=0)

    def test_make_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            make_build_params({"fanciness": 3})
        assert make_build_params({"mcv_size": 7}).mcv_size == 7


class TestExtractDegreeSequence:
    def test_numeric_with_nulls(self):
        rel = Relation(
            "r",
            [Column("a", "numeric")],
            {"a": np.array([1.0, 1.0, 2.0, np.nan, 1.0])},
            5,
        )
        assert extract_degree_sequence(rel, "a") == DegreeSequence((3, 1))

    def test_text_restricted_rows(self):
        rel = Relation(
            "r",
            [Column("s", "text")],
            {"s": ["x", "y", "x", None, "x"]},
            5,
        )
        rows = np.array([0, 2, 3], dtype=np.intp)
        assert extract_degree_sequence(rel, "s", rows) == DegreeSequence((2,))


class TestClustering:
    def test_distance_drives_merge(self):
        # two identical [2,2] profiles pair up before either joins [4]
        fns = [cum((2, 2)), cum((2, 2)), cum((4,))]
        assert cluster_sequence_groups(fns, 2) == [[0, 1], [2]]

    def test_zero_mass_gets_own_cluster(self):
        fns = [cum((3, 1)), PiecewiseLinearFn((0, 2), (0, 0)), cum((3, 1))]
        clusters = cluster_sequence_groups(fns, 2)
        assert [1] in clusters

    def test_fewer_members_than_groups(self):
        fns = [cum((2,)), cum((9, 1))]
        assert cluster_sequence_groups(fns, 5) == [[0], [1]]

    def test_empty(self):
        assert cluster_sequence_groups([], 3) == []

    def test_group_count_respected(self):
        fns = [cum((k, 1)) for k in range(2, 12)]
        assert len(cluster_sequence_groups(fns, 3)) == 3


def little_relation() -> Relation:
    # join column j is a key; filter f has counts a:3 b:2 c:1
    return Relation(
        "r",
        [Column("j", "numeric"), Column("f", "text")],
        {
            "j": np.arange(1.0, 7.0),
            "f": ["a", "a", "a", "b", "b", "c"],
        },
        6,
    )


class TestEqualityStats:
    def test_mcv_split_and_blooms(self):
        rel = little_relation()
        stats = build_equality_stats(rel, "j", "f", BuildParams(mcv_size=2))
        tracked = {m for g in stats.groups for m in g.members}
        assert tracked == {"a", "b"}
        for g in stats.groups:
            assert g.bloom is not None
            for m in g.members:
                assert value_to_bytes(m) in g.bloom
        assert stats.default.total == pytest.approx(1.0)

    def test_conditioned_masses(self):
        rel = little_relation()
        stats = build_equality_stats(rel, "j", "f", BuildParams(mcv_size=10))
        by_value = {m: g.representative for g in stats.groups for m in g.members}
        assert by_value["a"].total >= 3.0 - 1e-9
        assert by_value["b"].total >= 2.0 - 1e-9
        assert stats.default.total == 0.0

    def test_representatives_dominate_members(self):
        rng = np.random.default_rng(5)
        j = rng.integers(1, 30, size=200).astype(float)
        f = rng.integers(0, 12, size=200).astype(float)
        rel = Relation(
            "r",
            [Column("j", "numeric"), Column("f", "numeric")],
            {"j": j, "f": f},
            200,
        )
        stats = build_equality_stats(rel, "j", "f", BuildParams(clusters=3))
        for g in stats.groups:
            upto = int(np.ceil(g.representative.end))
            rep = sample_integer_ranks(g.representative, upto)
            for value in g.members:
                rows = np.nonzero(f == value)[0]
                exact = extract_degree_sequence(rel, "j", rows)
                grid = sample_integer_ranks(cum(exact.freqs), upto) if exact.distinct else None
                if grid is not None:
                    assert np.all(rep >= grid - 1e-9)


class TestRangeStats:
    def make(self, hist_depth=2):
        rel = Relation(
            "r",
            [Column("j", "numeric"), Column("f", "numeric")],
            {"j": np.arange(1.0, 9.0), "f": np.arange(1.0, 9.0)},
            8,
        )
        params = BuildParams(hist_depth=hist_depth, clusters=100)
        root = cum((1,) * 8)
        return build_range_stats(rel, "j", "f", params, root), root

    def test_level_structure(self):
        stats, _ = self.make()
        assert [level.cuts for level in stats.levels] == [(3.0, 5.0, 7.0), (5.0,)]

    def test_enclosing_bucket_selection(self):
        stats, root = self.make()
        assert lookup_range_group(stats, 1.0, 2.0, True).total == pytest.approx(2.0)
        assert lookup_range_group(stats, 3.0, 4.0, True).total == pytest.approx(2.0)
        # straddles the finest cut at 3 but fits the coarser [.., 5) bucket
        assert lookup_range_group(stats, 2.0, 4.0, True).total == pytest.approx(4.0)
        # straddles every cut; only the whole column encloses it
        assert lookup_range_group(stats, 2.0, 6.0, True) is root
        assert lookup_range_group(stats, None, None, True) is root

    def test_exclusive_upper_endpoint_fits_tighter(self):
        stats, root = self.make()
        # [3, 5) fits the finest bucket exactly; closing the endpoint pulls
        # in value 5, which no bucket boundary encloses short of the root
        assert lookup_range_group(stats, 3.0, 5.0, False).total == pytest.approx(2.0)
        assert lookup_range_group(stats, 3.0, 5.0, True) is root

    def test_text_column_rejected(self):
        rel = little_relation()
        with pytest.raises(StatsBuildError):
            build_range_stats(rel, "j", "f", BuildParams(), cum((1,) * 6))


class TestLikeStats:
    def test_gram_profiles(self):
        rel = Relation(
            "r",
            [Column("j", "numeric"), Column("s", "text")],
            {
                "j": np.arange(1.0, 5.0),
                "s": ["grape", "grapefruit", "banana", None],
            },
            4,
        )
        stats = build_like_stats(rel, "j", "s", BuildParams())
        assert "gra" in stats.gram_groups  # grape + grapefruit share it
        group = stats.groups[stats.gram_groups["gra"]]
        assert group.representative.total >= 2.0 - 1e-9
        # every gram of every row is tracked at the default mcv budget, so
        # the default profile covers only the null row, i.e. nothing
        assert stats.default.total == 0.0

    def test_default_covers_untracked_rows(self):
        rel = Relation(
            "r",
            [Column("j", "numeric"), Column("s", "text")],
            {
                "j": np.arange(1.0, 5.0),
                "s": ["aaa", "aaa", "bbb", "ccc"],
            },
            4,
        )
        stats = build_like_stats(rel, "j", "s", BuildParams(mcv_size=1))
        assert set(stats.gram_groups) == {"aaa"}
        assert stats.default.total == pytest.approx(2.0)


class TestPkFk:
    def make_pair(self):
        dim = Relation(
            "d",
            [Column("k", "numeric"), Column("g", "text")],
            {"k": np.array([1.0, 2.0, 3.0]), "g": ["x", "y", "z"]},
            3,
        )
        fact = Relation(
            "f",
            [Column("fk", "numeric")],
            {"fk": np.array([1.0, 1.0, 3.0, 9.0, np.nan])},
            5,
        )
        return fact, dim

    def test_propagation(self):
        fact, dim = self.make_pair()
        out, propagated = precompute_pk_fk(fact, dim, "fk", "k", ("g",))
        assert propagated == {"g": "__d__g"}
        assert out.data["__d__g"] == ["x", "x", "z", None, None]
        assert out.n_rows == 5

    def test_duplicate_pk_rejected(self):
        fact, dim = self.make_pair()
        dim.data["k"][1] = 1.0
        with pytest.raises(StatsBuildError):
            precompute_pk_fk(fact, dim, "fk", "k", ("g",))

    def test_null_pk_rejected(self):
        fact, dim = self.make_pair()
        dim.data["k"][0] = np.nan
        with pytest.raises(StatsBuildError):
            precompute_pk_fk(fact, dim, "fk", "k", ("g",))


class TestBuildCatalog:
    def test_families_per_column_pair(self):
        rel = little_relation()
        catalog = build_catalog({"r": rel}, {"r": ColumnRole(("j",), ("f",))})
        rs = catalog.relations["r"]
        assert set(rs.fallback) == {"j", "f"}
        assert set(rs.equality) == {("j", "f")}
        assert set(rs.like) == {("j", "f")}
        assert rs.range == {}
        assert rs.cardinality == 6

    def test_pkfk_grows_fact_families(self):
        fact = Relation(
            "f",
            [Column("fk", "numeric")],
            {"fk": np.array([1.0, 2.0, 2.0])},
            3,
        )
        dim = Relation(
            "d",
            [Column("k", "numeric"), Column("g", "text")],
            {"k": np.array([1.0, 2.0]), "g": ["x", "y"]},
            2,
        )
        catalog = build_catalog(
            {"f": fact, "d": dim},
            {"f": ColumnRole(("fk",), ()), "d": ColumnRole(("k",), ("g",))},
            (PkFkDeclaration("f", "fk", "d", "k"),),
        )
        fs = catalog.relations["f"]
        assert ("fk", "__d__g") in fs.equality
        assert "__d__g" in fs.fallback
        assert catalog.pkfk[0].propagated == {"g": "__d__g"}

    def test_unknown_role_column(self):
        rel = little_relation()
        with pytest.raises(ConfigError):
            build_catalog({"r": rel}, {"r": ColumnRole(("nope",), ())})
