"""
Metric and experiment tests
"""
import math

import numpy as np
import pytest

from carbonforge.agents.abstraction import data_abstraction_for
from carbonforge.agents.scaling import ScalingReport
from carbonforge.core.errors import DataValidationError
from carbonforge.core.estimator import IndexRecord
from carbonforge.core.evaluation import (
    BaselineReport,
    CVReport,
    RuntimeReport,
    SweepReport,
    TransferReport,
    ape,
    compare_baselines,
    coverage,
    cross_company_eval,
    ecdf,
    holdout_eval,
    jsd,
    k_sweep,
    kfold_cv,
    lci_f1,
    lci_jsd,
    lci_l1,
    mae,
    mape,
    masking_sweep,
    r2,
    runtime_scaling,
    scaling_sweep,
    split_holdout,
)
from carbonforge.core.generalizer import MaskedBenchmarkReport
from carbonforge.core.lcia import DeviationReport, FleetDeviationReport
from carbonforge.core.models import EstimateDistribution, InventoryEntry, LifeCycleInventory
from carbonforge.core.reports import Report, Row
from carbonforge.core.synthetic import make_product_world


def lci(*entries: InventoryEntry, product_class: str = "phone") -> LifeCycleInventory:
    inventory = LifeCycleInventory(product="p", da=data_abstraction_for(product_class))
    for entry in entries:
        inventory = inventory.with_entry(entry, "test")
    return inventory


def count(component_class: str, n: float) -> InventoryEntry:
    return InventoryEntry(component_class=component_class, quantity=n, unit="count")


class TestPointMetrics:
    """Test APE, MAPE, MAE, R2 and ECDF"""

    def test_mape_golden(self):
        assert mape([120.0], [100.0]) == pytest.approx(20.0)
        assert mape([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_mape_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        pred, true = rng.uniform(1, 10, 50), rng.uniform(1, 10, 50)
        expected = sum(abs(p - t) / abs(t) for p, t in zip(pred, true)) / 50 * 100
        assert mape(pred, true) == pytest.approx(expected, abs=1e-12)

    def test_zero_truth_named(self):
        with pytest.raises(DataValidationError, match="index 1"):
            ape([1.0, 2.0], [1.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(DataValidationError):
            mae([1.0], [1.0, 2.0])

    def test_permutation_equivariant(self):
        pred, true = [1.0, 5.0, 3.0], [2.0, 4.0, 3.5]
        assert mape(pred[::-1], true[::-1]) == pytest.approx(mape(pred, true))

    def test_r2(self):
        true = [1.0, 2.0, 3.0, 4.0]
        assert r2(true, true) == 1.0
        assert r2([2.5] * 4, true) == pytest.approx(0.0)

    def test_ecdf_steps(self):
        f = ecdf([3.0, 1.0, 2.0])
        assert f(0.5) == 0.0
        assert f(2.0) == pytest.approx(2 / 3)
        assert f(10.0) == 1.0
        assert f.points()[-1] == (3.0, 1.0)

    def test_coverage(self):
        e = EstimateDistribution.from_moments(10.0, 1.0)
        assert coverage([e, e], [10.5, 20.0]) == 0.5


class TestInventoryMetrics:
    """Test LCI-vs-LCI comparison"""

    def test_f1_worked_example(self):
        predicted = lci(count("IC", 3), count("PCB", 1))
        reference = lci(count("IC", 2), count("PCB", 1), count("sensor", 1))
        assert lci_f1(predicted, reference) == pytest.approx(0.75)
        assert lci_f1(reference, predicted) == pytest.approx(0.75)

    def test_f1_bounds(self):
        a = lci(count("IC", 2), count("PCB", 1))
        assert lci_f1(a, a) == 1.0
        assert lci_f1(lci(count("IC", 1)), lci(count("sensor", 1))) == 0.0
        assert lci_f1(lci(), lci()) == 1.0

    def test_non_count_entries_count_once(self):
        board = InventoryEntry(component_class="PCB", quantity=9000, unit="mm2")
        assert lci_f1(lci(board), lci(count("PCB", 1))) == 1.0

    def test_f1_needs_same_abstraction(self):
        with pytest.raises(DataValidationError):
            lci_f1(lci(product_class="phone"), lci(product_class="gpu"))

    def test_l1(self):
        assert lci_l1(lci(count("IC", 3)), lci(count("IC", 2))) == 1.0
        board = InventoryEntry(component_class="PCB", quantity=100, unit="mm2")
        assert lci_l1(lci(board), lci(count("PCB", 100))) == 200.0

    def test_jsd_golden(self):
        assert jsd([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.3113, abs=1e-4)
        assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
        assert jsd([2.0, 2.0], [1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)

    def test_lci_jsd(self):
        a = lci(count("IC", 1), count("PCB", 1))
        b = lci(count("IC", 2))
        assert lci_jsd(a, b) == pytest.approx(0.3113, abs=1e-4)
        assert lci_jsd(b, a) == pytest.approx(lci_jsd(a, b))

    def test_lci_jsd_zero_total(self):
        with pytest.raises(DataValidationError):
            lci_jsd(lci(), lci(count("IC", 1)))


class TestHoldout:
    """Test the holdout machinery"""

    def test_split_deterministic(self):
        records = make_product_world(50)
        assert split_holdout(records, 0.2, 7) == split_holdout(records, 0.2, 7)
        train, test = split_holdout(records, 0.2, 7)
        assert len(test) == 10
        assert {r.id for r in train}.isdisjoint(r.id for r in test)

    def test_failures_recorded(self):
        records = make_product_world(20)
        empty = [r.model_copy(update={"features": r.features.masked(r.features.names)}) for r in records[:2]]
        result = holdout_eval(records[2:], empty)
        assert result.failures == 2
        assert math.isinf(result.mape)


class TestCrossValidation:
    """Test k-fold cross-validation"""

    def test_every_record_tested_once(self):
        records = make_product_world(10)
        report = kfold_cv(records, k_folds=5, holdout=0.0)
        assert [f.n_test for f in report.folds] == [2] * 5
        tested = sorted(i for f in report.folds for i in f.test_ids)
        assert tested == sorted(r.id for r in records)
        assert report.holdout_mape is None

    def test_holdout_then_folds(self):
        report = kfold_cv(make_product_world(100), k_folds=5, holdout=0.2, seed=1)
        assert sum(f.n_test for f in report.folds) == 80
        assert report.holdout_mape is not None
        assert report.mean_mape == pytest.approx(np.mean([f.mape for f in report.folds]))

    def test_seed_reproducible(self):
        records = make_product_world(60)
        assert kfold_cv(records, seed=4) == kfold_cv(records, seed=4)

    def test_parallel_matches_serial(self):
        records = make_product_world(60)
        assert kfold_cv(records, max_workers=3) == kfold_cv(records, max_workers=1)

    def test_too_few_records(self):
        with pytest.raises(DataValidationError):
            kfold_cv(make_product_world(4), k_folds=5)

    def test_csv_export(self, tmp_path):
        report = kfold_cv(make_product_world(30), k_folds=3, holdout=0.0)
        text = report.to_csv(tmp_path / "cv.csv")
        assert text.splitlines()[0].split(",") == ["fold", "n_train", "n_test", "mape", "mae"]
        assert (tmp_path / "cv.csv").exists()

    def test_json_export(self, tmp_path):
        report = kfold_cv(make_product_world(30), k_folds=3, holdout=0.0)
        data = report.to_json(tmp_path / "out" / "cv.json")
        assert (tmp_path / "out" / "cv.json").read_bytes() == data
        assert type(report).model_validate_json(data) == report


class TestSweeps:
    """Test scaling, masking and neighbor sweeps"""

    def test_scaling_shape_and_trend(self):
        report = scaling_sweep(make_product_world(150), repeats=4)
        assert [p.value for p in report.points] == [5, 10, 20, 40, 80, 120]
        assert [len(p.mapes) for p in report.points] == [4, 4, 4, 4, 4, 1]
        assert report.points[-1].sd_mape == 0.0
        assert report.means()[0] > report.means()[-1]
        assert len(report.rows()) == 21

    def test_masking_baseline_and_empty(self):
        records = make_product_world(60)
        report = masking_sweep(records, fractions=(0.0, 1.0), repeats=2)
        train, test = split_holdout(records, 0.2, 0)
        baseline = holdout_eval(train, test).mape
        assert report.points[0].mapes == (baseline, baseline)
        assert math.isinf(report.points[1].mean_mape)
        assert report.points[1].failures == 2 * len(test)

    def test_k_sweep(self):
        report = k_sweep(make_product_world(80), ks=(1, 5))
        assert [p.value for p in report.points] == [1, 5]
        assert report.k == 5


class TestBaselines:
    """Test the regressor comparison"""

    def test_all_models_scored(self):
        report = compare_baselines(make_product_world(120, missing=0.1))
        assert [s.model for s in report.scores] == [
            "knn-weighted-gaussian", "linear-regression", "random-forest", "knn-uniform",
        ]
        assert all(math.isfinite(s.mape) for s in report.scores)
        assert report.score("random-forest").mae > 0
        with pytest.raises(KeyError):
            report.score("svm")


class TestRuntime:
    """Test the latency experiment"""

    def test_points_per_size(self):
        report = runtime_scaling(sizes=(50, 100, 200), n_queries=5)
        assert [p.size for p in report.points] == [50, 100, 200]
        assert all(p.median_ms > 0 for p in report.points)

    @pytest.mark.slow
    def test_latency_linear_in_index_size(self):
        report = runtime_scaling(sizes=(1000, 2000, 4000), n_queries=50)
        assert report.linear_r2 >= 0.95
        assert report.slope_ms_per_record > 0
        assert report.points[0].median_ms < 10.0


class TestTransfer:
    """Test cross-company evaluation"""

    def test_calibration_recovers_scale(self):
        source = make_product_world(200, seed=0, company="A")
        target = [
            IndexRecord(id=r.id, features=r.features, target=r.target * 1.5)
            for r in make_product_world(100, seed=1, company="B")
        ]
        report = cross_company_eval(source, target, k=5)
        assert report.calibration_scale == pytest.approx(1.5, rel=0.25)
        assert report.mape_cross_calibrated < report.mape_cross
        assert len(report.records) == 80
        assert set(report.ecdfs()) == {"within", "cross", "cross_calibrated"}


class TestReportRows:
    """Test that every report can be flattened"""

    @pytest.mark.parametrize("cls", [
        CVReport, SweepReport, BaselineReport, RuntimeReport, TransferReport,
        MaskedBenchmarkReport, DeviationReport, FleetDeviationReport, ScalingReport,
    ])
    def test_reports_implement_rows(self, cls):
        assert cls.rows is not Report.rows

    def test_row_models_are_not_reports(self):
        report = kfold_cv(make_product_world(30), k_folds=3, holdout=0.0)
        assert isinstance(report.folds[0], Row)
        assert not isinstance(report.folds[0], Report)
        assert len(report.rows()) == 3
