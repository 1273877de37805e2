"""
kNN weighted Gaussian estimator tests
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carbonforge.core.errors import DataValidationError, EstimationError
from carbonforge.core.estimator import (
    CalibrationTransform,
    IndexRecord,
    add_record,
    apply_calibration,
    build_index,
    compose_calibration,
    distance,
    estimate,
    fit_calibration,
    index_from_dict,
    index_to_dict,
    load_index,
    save_index,
)
from carbonforge.core.evaluation import coverage
from carbonforge.core.models import EstimateDistribution, FeatureVector, completeness, make_schema
from carbonforge.core.synthetic import make_cluster_world, make_product_world

SCHEMA = make_schema([("x", "numeric"), ("y", "numeric"), ("c", "categorical")])


def vec(**values) -> FeatureVector:
    return FeatureVector(schema=SCHEMA, values=values)


def rec(rid: str, target: float, **values) -> IndexRecord:
    return IndexRecord(id=rid, features=vec(**values), target=target)


class TestDistance:
    """Test the missing-aware distance"""

    NORM = {"x": (0.0, 1.0), "y": (0.0, 1.0)}

    def test_euclidean_when_complete(self):
        d = distance(vec(x=0, y=0, c="a"), vec(x=3, y=4, c="a"), self.NORM)
        assert d == pytest.approx(5.0)

    def test_categorical_mismatch_counts_one(self):
        assert distance(vec(c="a"), vec(c="b"), self.NORM) == pytest.approx(math.sqrt(3.0))

    def test_rescaled_over_shared_features(self):
        # one shared feature out of three: sqrt(d / |S|) * |diff|
        assert distance(vec(x=1), vec(x=3, y=7), self.NORM) == pytest.approx(2.0 * math.sqrt(3.0))

    def test_no_overlap_is_infinite(self):
        assert distance(vec(x=1), vec(y=1), self.NORM) == math.inf

    def test_zscored_with_normalization(self):
        assert distance(vec(x=10), vec(x=20), {"x": (0.0, 10.0), "y": (0.0, 1.0)}) == pytest.approx(math.sqrt(3.0))

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
    def test_symmetric(self, x1, y1, x2, y2):
        a, b = vec(x=x1, y=y1), vec(x=x2, y=y2)
        assert distance(a, b, self.NORM) == pytest.approx(distance(b, a, self.NORM))


class TestBuildIndex:
    """Test index construction"""

    def test_empty_rejected(self):
        with pytest.raises(DataValidationError):
            build_index([])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataValidationError, match="duplicate"):
            build_index([rec("a", 1, x=1), rec("a", 2, x=2)])

    def test_schema_mismatch_rejected(self):
        other = IndexRecord(id="b", features=FeatureVector(schema=make_schema([("x", "numeric")]), values={"x": 1}),
                            target=1)
        with pytest.raises(DataValidationError):
            build_index([rec("a", 1, x=1), other])

    def test_normalization_ignores_missing(self):
        index = build_index([rec("a", 1, x=1), rec("b", 2, x=3), rec("c", 3, y=5)])
        assert index.normalization["x"] == pytest.approx((2.0, 1.0))
        # constant column falls back to unit std
        assert index.normalization["y"] == pytest.approx((5.0, 1.0))

    def test_add_record_rebuilds(self):
        index = build_index([rec("a", 1, x=1), rec("b", 2, x=3)])
        bigger = add_record(index, rec("c", 3, x=5))
        assert bigger.size == 3
        assert index.size == 2
        assert bigger.normalization["x"][0] == pytest.approx(3.0)


class TestEstimate:
    """Test the weighted Gaussian fit"""

    def test_single_neighbor_has_zero_std(self):
        index = build_index([rec("a", 100, x=0, y=0, c="p"), rec("b", 300, x=10, y=10, c="q")])
        e = estimate(index, vec(x=0.1, y=0, c="p"), k=1)
        assert e.mean == pytest.approx(100.0)
        assert e.std == 0.0
        assert e.ci95 == pytest.approx((100.0, 100.0))
        assert [n.record_id for n in e.neighbors] == ["a"]

    def test_completeness_weights(self):
        # a is fully described (weight 1), b has one of three features (weight 1/3)
        index = build_index([rec("a", 100, x=0, y=0, c="p"), rec("b", 200, x=0)])
        e = estimate(index, vec(x=0, y=0, c="p"), k=2)
        assert e.mean == pytest.approx(125.0)
        var = 0.75 * 25.0 ** 2 + 0.25 * 75.0 ** 2
        assert e.std == pytest.approx(math.sqrt(var))
        assert {n.record_id: n.weight for n in e.neighbors} == pytest.approx({"a": 1.0, "b": 1 / 3})

    def test_ties_broken_by_id(self):
        index = build_index([rec("c", 3, x=1), rec("a", 1, x=1), rec("b", 2, x=1)])
        e = estimate(index, vec(x=1), k=2)
        assert [n.record_id for n in e.neighbors] == ["a", "b"]

    def test_k_larger_than_index(self):
        index = build_index([rec("a", 1, x=1), rec("b", 3, x=2)])
        e = estimate(index, vec(x=1), k=10)
        assert len(e.neighbors) == 2

    def test_disjoint_query_fails(self):
        index = build_index([rec("a", 1, x=1), rec("b", 3, x=2)])
        with pytest.raises(EstimationError, match="disjoint"):
            estimate(index, vec(y=1), k=3)

    def test_unreachable_records_skipped(self):
        index = build_index([rec("a", 1, x=1), rec("b", 3, y=2)])
        e = estimate(index, vec(x=1), k=5)
        assert [n.record_id for n in e.neighbors] == ["a"]

    def test_schema_mismatch(self):
        index = build_index([rec("a", 1, x=1)])
        with pytest.raises(DataValidationError):
            estimate(index, FeatureVector(schema=make_schema([("x", "numeric")]), values={"x": 1}))

    def test_zero_k(self):
        index = build_index([rec("a", 1, x=1)])
        with pytest.raises(EstimationError):
            estimate(index, vec(x=1), k=0)

    def test_unseen_category_treated_as_mismatch(self):
        index = build_index([rec("a", 1, c="p"), rec("b", 2, c="q")])
        e = estimate(index, vec(c="r"), k=2)
        assert all(n.distance == pytest.approx(math.sqrt(3.0)) for n in e.neighbors)

    def test_interval_brackets_mean_on_product_world(self):
        world = make_product_world(120, seed=3)
        index = build_index(world[:100])
        for r in world[100:]:
            e = estimate(index, r.features, k=5)
            assert e.ci95[0] <= e.mean <= e.ci95[1]

    def test_deterministic(self):
        world = make_product_world(60, seed=1)
        a = estimate(build_index(world[:50]), world[55].features, k=5)
        b = estimate(build_index(list(reversed(world[:50]))), world[55].features, k=5)
        assert a.mean == pytest.approx(b.mean)
        assert [n.record_id for n in a.neighbors] == [n.record_id for n in b.neighbors]

    @settings(max_examples=25, deadline=None)
    @given(st.permutations(range(50)))
    def test_record_order_irrelevant(self, order):
        world = make_product_world(60, seed=1)
        query = world[55].features
        base = estimate(build_index(world[:50]), query, k=5)
        shuffled = estimate(build_index([world[i] for i in order]), query, k=5)
        assert shuffled.mean == pytest.approx(base.mean, rel=1e-12)
        assert [n.record_id for n in shuffled.neighbors] == [n.record_id for n in base.neighbors]

    def test_more_neighbors_shrink_error_on_smooth_world(self):
        world = make_product_world(400, seed=0, noise=0.0)
        index = build_index(world[:350])
        errors = [abs(estimate(index, r.features, k=5).mean - r.target) / r.target for r in world[350:]]
        assert float(np.mean(errors)) < 0.25

    @pytest.mark.slow
    def test_coverage_near_nominal_on_cluster_world(self):
        world = make_cluster_world(40, 100, seed=0, rel_sd=0.1)
        held = [r for i, r in enumerate(world) if i % 100 < 10]
        index = build_index([r for i, r in enumerate(world) if i % 100 >= 10])
        estimates = [estimate(index, r.features, k=40) for r in held]
        assert 0.90 <= coverage(estimates, [r.target for r in held]) <= 0.99


def brute_force(records, query, k):
    """Exhaustive neighbor search with the scalar distance"""
    norm = build_index(records).normalization
    scored = sorted(
        ((distance(r.features, query, norm), r.id, r) for r in records),
        key=lambda item: (item[0], item[1]),
    )
    chosen = [r for d, _, r in scored if math.isfinite(d)][:k]
    floor = 1.0 / len(query.specs)
    weights = np.array([max(completeness(r.features), floor) for r in chosen])
    targets = np.array([r.target for r in chosen])
    p = weights / weights.sum()
    mean = float(np.dot(p, targets))
    return [r.id for r in chosen], mean, math.sqrt(float(np.dot(p, (targets - mean) ** 2)))


class TestBruteForceOracle:
    """Test the vectorized search against exhaustive search"""

    def test_matches_exhaustive_search(self):
        world = make_product_world(600, seed=11, missing=0.3)
        records, queries = world[:500], world[500:]
        index = build_index(records)
        for q in queries:
            ids, mean, std = brute_force(records, q.features, 5)
            e = estimate(index, q.features, k=5)
            assert [n.record_id for n in e.neighbors] == ids
            assert e.mean == pytest.approx(mean, rel=1e-12)
            assert e.std == pytest.approx(std, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("seed", range(30))
    def test_add_record_equals_rebuild(self, seed):
        rng = np.random.default_rng(seed)
        world = make_product_world(int(rng.integers(3, 40)), seed=seed, missing=0.25)
        incremental = add_record(build_index(world[:-1]), world[-1])
        rebuilt = build_index(world)
        assert incremental == rebuilt
        query = world[0].features
        assert estimate(incremental, query, k=3) == estimate(rebuilt, query, k=3)


class TestCalibration:
    """Test cross-company calibration transforms"""

    def test_median_ratio(self):
        t = fit_calibration([100, 200, 300], [150, 300, 450])
        assert t.scale == pytest.approx(1.5)
        assert t.shift == 0.0

    def test_identity_composition(self):
        t = CalibrationTransform(scale=2.0, shift=1.0)
        assert compose_calibration(CalibrationTransform(), t) == t

    def test_composition_applies_in_order(self):
        first, then = CalibrationTransform(scale=2.0, shift=1.0), CalibrationTransform(scale=3.0, shift=-2.0)
        both = compose_calibration(first, then)
        assert both(5.0) == pytest.approx(then(first(5.0)))

    def test_apply_scales_interval(self):
        e = apply_calibration(CalibrationTransform(scale=2.0), EstimateDistribution.from_moments(100.0, 10.0))
        assert (e.mean, e.std) == pytest.approx((200.0, 20.0))
        assert e.ci95 == pytest.approx((160.8, 239.2))

    def test_empty_inputs(self):
        with pytest.raises(EstimationError):
            fit_calibration([], [1.0])


class TestSnapshots:
    """Test index save/load"""

    def test_save_then_load_gives_same_estimates(self, tmp_path):
        world = make_product_world(50, seed=2, missing=0.2)
        index = build_index(world[:45], category="laptop")
        loaded = load_index(save_index(index, tmp_path / "index.json"))
        assert loaded == index
        for r in world[45:]:
            assert estimate(loaded, r.features) == estimate(index, r.features)

    def test_snapshot_without_records(self):
        with pytest.raises(DataValidationError):
            index_from_dict({"category": "x"})

    def test_demo_index_normalization_matches(self, demo_dir, caplog):
        index = load_index(demo_dir / "index.json")
        assert index.size == 8
        assert index.normalization["battery_wh"] == pytest.approx((60.0, 10.0))
        assert "differs" not in caplog.text

    def test_dict_form_is_stable(self):
        index = build_index([rec("a", 1, x=1, c="p"), rec("b", 2, x=3)])
        assert index_to_dict(index_from_dict(index_to_dict(index))) == index_to_dict(index)
