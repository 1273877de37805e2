"""
Metrics and experiment drivers.

Point metrics (APE, MAPE, MAE, R2, ECDF), LCI-vs-LCI comparison (F1 over
class multiplicities, L1 and Jensen-Shannon over (class, unit) buckets),
and the seeded experiments run on estimator index records: k-fold CV,
train-size scaling, masking, neighbor-count sweeps, baselines, runtime and
cross-company transfer.
"""
from __future__ import annotations

import logging
import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import jensenshannon
from sklearn.compose import ColumnTransformer
from sklearn.ensemble import RandomForestRegressor
from sklearn.impute import SimpleImputer
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from sklearn.model_selection import KFold, train_test_split
from sklearn.neighbors import KNeighborsRegressor
from sklearn.pipeline import Pipeline, make_pipeline
from sklearn.preprocessing import OneHotEncoder, StandardScaler

from .errors import DataValidationError, EstimationError
from .estimator import (
    DEFAULT_K,
    IndexRecord,
    apply_calibration,
    build_index,
    estimate,
    fit_calibration,
)
from .models import EstimateDistribution, LifeCycleInventory
from .reports import Report, Row
from .runner import run_parallel
from .synthetic import make_product_world, mask_records

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Point metrics
# ---------------------------------------------------------------------------


def _pair(pred: Sequence[float], true: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(true, dtype=float)
    if p.shape != t.shape or p.ndim != 1:
        raise DataValidationError(f"pred and true must be equal-length vectors, got {p.shape} and {t.shape}")
    if p.size == 0:
        raise DataValidationError("metrics need at least one pair")
    return p, t


def ape(pred: Sequence[float], true: Sequence[float]) -> np.ndarray:
    """Absolute percentage error per pair, in percent"""
    p, t = _pair(pred, true)
    zeros = np.flatnonzero(t == 0)
    if zeros.size:
        raise DataValidationError(f"true value at index {int(zeros[0])} is zero", details={'index': int(zeros[0])})
    return np.abs(p - t) / np.abs(t) * 100.0


def mape(pred: Sequence[float], true: Sequence[float]) -> float:
    return float(np.mean(ape(pred, true)))


def mae(pred: Sequence[float], true: Sequence[float]) -> float:
    p, t = _pair(pred, true)
    return float(np.mean(np.abs(p - t)))


def r2(pred: Sequence[float], true: Sequence[float]) -> float:
    p, t = _pair(pred, true)
    return float(r2_score(t, p))


@dataclass(frozen=True)
class ECDF:
    """Empirical CDF as a right-continuous step function"""

    values: Tuple[float, ...]

    @classmethod
    def of(cls, values: Sequence[float]) -> "ECDF":
        return cls(tuple(sorted(float(v) for v in values)))

    def __call__(self, x: float) -> float:
        if not self.values:
            return 0.0
        return float(np.searchsorted(self.values, x, side="right")) / len(self.values)

    def points(self) -> List[Tuple[float, float]]:
        n = len(self.values)
        return [(v, (i + 1) / n) for i, v in enumerate(self.values)]


def ecdf(values: Sequence[float]) -> ECDF:
    return ECDF.of(values)


def coverage(estimates: Sequence[EstimateDistribution], truths: Sequence[float]) -> float:
    """Fraction of truths inside their estimate's 95% interval"""
    if len(estimates) != len(truths) or not estimates:
        raise DataValidationError("coverage needs equal, non-empty estimate and truth lists")
    return sum(e.contains(t) for e, t in zip(estimates, truths)) / len(truths)


# ---------------------------------------------------------------------------
# LCI comparison
# ---------------------------------------------------------------------------


def _check_same_da(predicted: LifeCycleInventory, reference: LifeCycleInventory) -> None:
    if set(predicted.da.component_classes) != set(reference.da.component_classes):
        raise DataValidationError(
            "LCI comparison needs both inventories under the same data abstraction",
            details={'predicted': list(predicted.da.component_classes),
                     'reference': list(reference.da.component_classes)},
        )


def class_multiplicity(lci: LifeCycleInventory) -> Counter:
    """Count entries contribute their quantity, any other entry counts once"""
    counts: Counter = Counter()
    for entry in lci.entries:
        counts[entry.component_class] += entry.quantity if entry.unit == "count" else 1.0
    return counts


def _buckets(lci: LifeCycleInventory) -> Dict[Tuple[str, str], float]:
    totals: Dict[Tuple[str, str], float] = defaultdict(float)
    for entry in lci.entries:
        totals[(entry.component_class, entry.unit)] += entry.quantity
    return dict(totals)


def lci_f1(predicted: LifeCycleInventory, reference: LifeCycleInventory) -> float:
    _check_same_da(predicted, reference)
    mp, mr = class_multiplicity(predicted), class_multiplicity(reference)
    total_p, total_r = sum(mp.values()), sum(mr.values())
    if total_p == 0 and total_r == 0:
        return 1.0
    if total_p == 0 or total_r == 0:
        return 0.0
    matched = sum(min(mp[c], mr[c]) for c in set(mp) | set(mr))
    precision, recall = matched / total_p, matched / total_r
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def lci_l1(predicted: LifeCycleInventory, reference: LifeCycleInventory) -> float:
    bp, br = _buckets(predicted), _buckets(reference)
    return math.fsum(abs(bp.get(key, 0.0) - br.get(key, 0.0)) for key in set(bp) | set(br))


def jsd(p: Sequence[float], q: Sequence[float]) -> float:
    """Base-2 Jensen-Shannon divergence of two non-negative weight vectors"""
    p_arr, q_arr = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p_arr.sum() <= 0 or q_arr.sum() <= 0:
        raise DataValidationError("JSD needs two distributions with positive mass")
    value = float(jensenshannon(p_arr / p_arr.sum(), q_arr / q_arr.sum(), base=2) ** 2)
    return min(max(value, 0.0), 1.0)


def lci_jsd(predicted: LifeCycleInventory, reference: LifeCycleInventory) -> float:
    _check_same_da(predicted, reference)
    bp, br = _buckets(predicted), _buckets(reference)
    keys = sorted(set(bp) | set(br))
    if sum(bp.values()) <= 0 or sum(br.values()) <= 0:
        raise DataValidationError("lci_jsd needs both inventories to carry positive total quantity")
    return jsd([bp.get(k, 0.0) for k in keys], [br.get(k, 0.0) for k in keys])


# ---------------------------------------------------------------------------
# Holdout machinery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HoldoutResult:
    ids: Tuple[str, ...]
    truths: Tuple[float, ...]
    estimates: Tuple[Optional[EstimateDistribution], ...]

    @property
    def failures(self) -> int:
        return sum(e is None for e in self.estimates)

    def _ok(self) -> Tuple[List[float], List[float]]:
        pairs = [(e.mean, t) for e, t in zip(self.estimates, self.truths) if e is not None]
        return [p for p, _ in pairs], [t for _, t in pairs]

    @property
    def mape(self) -> float:
        pred, true = self._ok()
        return mape(pred, true) if pred else math.inf

    @property
    def mae(self) -> float:
        pred, true = self._ok()
        return mae(pred, true) if pred else math.inf

    @property
    def r2(self) -> float:
        pred, true = self._ok()
        return r2(pred, true) if len(pred) > 1 else math.nan

    @property
    def apes(self) -> List[float]:
        pred, true = self._ok()
        return list(ape(pred, true)) if pred else []


def holdout_eval(train: Sequence[IndexRecord], test: Sequence[IndexRecord], k: int = DEFAULT_K,
                 category: str = "eval") -> HoldoutResult:
    """Estimate every test record from an index over ``train``

    Queries with no reachable neighbor are recorded as failures (None).
    """
    index = build_index(train, category)
    estimates: List[Optional[EstimateDistribution]] = []
    for record in test:
        try:
            estimates.append(estimate(index, record.features, k))
        except EstimationError:
            estimates.append(None)
    return HoldoutResult(
        ids=tuple(r.id for r in test),
        truths=tuple(r.target for r in test),
        estimates=tuple(estimates),
    )


def split_holdout(records: Sequence[IndexRecord], holdout: float, seed: int
                  ) -> Tuple[List[IndexRecord], List[IndexRecord]]:
    if not 0.0 < holdout < 1.0:
        raise DataValidationError(f"holdout must be in (0, 1), got {holdout}")
    train_idx, test_idx = train_test_split(np.arange(len(records)), test_size=holdout, random_state=seed)
    return [records[i] for i in sorted(train_idx)], [records[i] for i in sorted(test_idx)]


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if not np.all(np.isfinite(arr)):
        return math.inf, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


class FoldResult(Row):
    fold: int
    n_train: int
    n_test: int
    mape: float
    mae: float
    test_ids: Tuple[str, ...]


class CVReport(Report):
    k_folds: int
    holdout: float
    seed: int
    k: int
    folds: Tuple[FoldResult, ...]
    mean_mape: float
    sd_mape: float
    holdout_mape: Optional[float] = None
    holdout_mae: Optional[float] = None
    holdout_r2: Optional[float] = None

    def rows(self) -> List[Dict[str, Any]]:
        return [f.model_dump(exclude={'test_ids'}) for f in self.folds]


def kfold_cv(records: Sequence[IndexRecord], k_folds: int = 5, holdout: float = 0.2, seed: int = 0,
             k: int = DEFAULT_K, max_workers: int = 1) -> CVReport:
    """Hold out a test share, then k-fold cross-validate on the remainder

    ``holdout=0`` cross-validates on every record.
    """
    records = list(records)
    if k_folds < 2:
        raise DataValidationError("k_folds must be at least 2")
    if len(records) < k_folds:
        raise DataValidationError(f"{len(records)} records cannot fill {k_folds} folds")

    if holdout > 0:
        dev, test = split_holdout(records, holdout, seed)
    else:
        dev, test = records, []
    if len(dev) < k_folds:
        raise DataValidationError(f"{len(dev)} records left after holdout cannot fill {k_folds} folds")

    splits = list(KFold(n_splits=k_folds, shuffle=True, random_state=seed).split(np.arange(len(dev))))

    def _fold(item: Tuple[int, Tuple[np.ndarray, np.ndarray]]) -> FoldResult:
        fold, (train_idx, val_idx) = item
        result = holdout_eval([dev[i] for i in train_idx], [dev[i] for i in val_idx], k)
        return FoldResult(fold=fold, n_train=len(train_idx), n_test=len(val_idx),
                          mape=result.mape, mae=result.mae, test_ids=result.ids)

    folds = run_parallel(_fold, list(enumerate(splits)), max_workers)
    mean_mape, sd_mape = _mean_sd([f.mape for f in folds])

    extra: Dict[str, Any] = {}
    if test:
        final = holdout_eval(dev, test, k)
        extra = {'holdout_mape': final.mape, 'holdout_mae': final.mae, 'holdout_r2': final.r2}
    logger.info("%d-fold CV: MAPE %.2f%% ± %.2f", k_folds, mean_mape, sd_mape)
    return CVReport(k_folds=k_folds, holdout=holdout, seed=seed, k=k, folds=tuple(folds),
                    mean_mape=mean_mape, sd_mape=sd_mape, **extra)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


class SweepPoint(Row):
    """One x-value of a sweep: repeated MAPEs and their summary"""

    value: float
    mapes: Tuple[float, ...]
    mean_mape: float
    sd_mape: float
    failures: int = 0

    @classmethod
    def of(cls, value: float, mapes: Sequence[float], failures: int = 0) -> "SweepPoint":
        mean, sd = _mean_sd(mapes)
        return cls(value=value, mapes=tuple(mapes), mean_mape=mean, sd_mape=sd, failures=failures)


class SweepReport(Report):
    kind: str
    seed: int
    k: int
    points: Tuple[SweepPoint, ...]

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {'kind': self.kind, 'value': p.value, 'repeat': r, 'mape': m,
             'mean_mape': p.mean_mape, 'sd_mape': p.sd_mape, 'failures': p.failures}
            for p in self.points for r, m in enumerate(p.mapes)
        ]

    def means(self) -> List[float]:
        return [p.mean_mape for p in self.points]


def scaling_sweep(records: Sequence[IndexRecord], sizes: Sequence[int] = (5, 10, 20, 40, 80, 120),
                  repeats: int = 10, seed: int = 0, k: int = DEFAULT_K, holdout: float = 0.2,
                  max_workers: int = 1) -> SweepReport:
    """MAPE on one fixed evaluation set for random training subsets of each size

    A size at or above the pool size is a single deterministic point.
    """
    pool, test = split_holdout(list(records), holdout, seed)

    def _one(job: Tuple[int, int]) -> HoldoutResult:
        size, repeat = job
        if size >= len(pool):
            return holdout_eval(pool, test, k)
        rng = np.random.default_rng([seed, size, repeat])
        chosen = sorted(rng.choice(len(pool), size=size, replace=False))
        return holdout_eval([pool[i] for i in chosen], test, k)

    jobs = [(size, r) for size in sizes for r in range(1 if size >= len(pool) else repeats)]
    results = run_parallel(_one, jobs, max_workers)

    by_size: Dict[int, List[HoldoutResult]] = defaultdict(list)
    for (size, _), result in zip(jobs, results):
        by_size[size].append(result)
    points = tuple(
        SweepPoint.of(size, [r.mape for r in by_size[size]], sum(r.failures for r in by_size[size]))
        for size in sizes
    )
    return SweepReport(kind="train_size", seed=seed, k=k, points=points)


def masking_sweep(records: Sequence[IndexRecord], fractions: Sequence[float] = (0.0, 0.1, 0.25, 0.5),
                  repeats: int = 5, seed: int = 0, k: int = DEFAULT_K, holdout: float = 0.2,
                  max_workers: int = 1) -> SweepReport:
    """MAPE with a fraction of all feature entries hidden across the dataset

    Train and evaluation records are masked alike; MAPE is computed over the
    queries that found a neighbor and the rest are counted as failures.
    """
    records = list(records)

    def _one(job: Tuple[float, int]) -> HoldoutResult:
        fraction, repeat = job
        masked = mask_records(records, fraction, seed=int(np.random.default_rng([seed, repeat]).integers(2**31)))
        train, test = split_holdout(masked, holdout, seed)
        return holdout_eval(train, test, k)

    jobs = [(f, r) for f in fractions for r in range(repeats)]
    results = run_parallel(_one, jobs, max_workers)

    by_fraction: Dict[float, List[HoldoutResult]] = defaultdict(list)
    for (fraction, _), result in zip(jobs, results):
        by_fraction[fraction].append(result)
    points = tuple(
        SweepPoint.of(f, [r.mape for r in by_fraction[f]], sum(r.failures for r in by_fraction[f]))
        for f in fractions
    )
    return SweepReport(kind="missing_fraction", seed=seed, k=k, points=points)


def k_sweep(records: Sequence[IndexRecord], ks: Sequence[int] = (1, 3, 5, 10, 20),
            seed: int = 0, holdout: float = 0.2) -> SweepReport:
    train, test = split_holdout(list(records), holdout, seed)
    points = []
    for k in ks:
        result = holdout_eval(train, test, k)
        points.append(SweepPoint.of(k, [result.mape], result.failures))
    return SweepReport(kind="neighbors", seed=seed, k=max(ks), points=tuple(points))


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


class BaselineScore(Row):
    model: str
    mape: float
    mae: float
    r2: float


class BaselineReport(Report):
    seed: int
    holdout: float
    scores: Tuple[BaselineScore, ...]

    def rows(self) -> List[Dict[str, Any]]:
        return [s.model_dump() for s in self.scores]

    def score(self, model: str) -> BaselineScore:
        for s in self.scores:
            if s.model == model:
                return s
        raise KeyError(model)


def _frame(records: Sequence[IndexRecord], numeric: Sequence[str], categorical: Sequence[str]) -> pd.DataFrame:
    df = pd.DataFrame([r.features.values for r in records], columns=list(numeric) + list(categorical))
    for name in numeric:
        df[name] = df[name].astype(float)
    for name in categorical:
        df[name] = df[name].astype(object).where(df[name].notna(), np.nan)
    return df


def _baseline(regressor: Any, numeric: Sequence[str], categorical: Sequence[str]) -> Pipeline:
    transformers = []
    if numeric:
        transformers.append(("num", make_pipeline(SimpleImputer(strategy="mean", keep_empty_features=True),
                                                  StandardScaler()), list(numeric)))
    if categorical:
        transformers.append(("cat", make_pipeline(
            SimpleImputer(strategy="constant", fill_value="__missing__", keep_empty_features=True),
            OneHotEncoder(handle_unknown="ignore"),
        ), list(categorical)))
    return Pipeline([("features", ColumnTransformer(transformers)), ("model", regressor)])


def compare_baselines(records: Sequence[IndexRecord], seed: int = 0, holdout: float = 0.2,
                      k: int = DEFAULT_K) -> BaselineReport:
    """kNN weighted Gaussian against standard regressors on one holdout split"""
    train, test = split_holdout(list(records), holdout, seed)
    specs = train[0].features.specs
    numeric = [s.name for s in specs if s.kind == "numeric"]
    categorical = [s.name for s in specs if s.kind == "categorical"]
    truths = [r.target for r in test]

    ours = holdout_eval(train, test, k)
    pred, true = ours._ok()
    scores = [BaselineScore(model="knn-weighted-gaussian", mape=mape(pred, true),
                            mae=mae(pred, true), r2=r2(pred, true))]

    x_train, x_test = _frame(train, numeric, categorical), _frame(test, numeric, categorical)
    y_train = np.array([r.target for r in train])
    regressors = {
        'linear-regression': LinearRegression(),
        'random-forest': RandomForestRegressor(n_estimators=100, random_state=seed),
        'knn-uniform': KNeighborsRegressor(n_neighbors=min(k, len(train))),
    }
    for name, regressor in regressors.items():
        model = _baseline(regressor, numeric, categorical).fit(x_train, y_train)
        predicted = model.predict(x_test)
        scores.append(BaselineScore(model=name, mape=mape(predicted, truths),
                                    mae=mae(predicted, truths), r2=r2(predicted, truths)))
    return BaselineReport(seed=seed, holdout=holdout, scores=tuple(scores))


# ---------------------------------------------------------------------------
# Runtime
# ---------------------------------------------------------------------------


class RuntimePoint(Row):
    size: int
    median_ms: float


class RuntimeReport(Report):
    n_queries: int
    points: Tuple[RuntimePoint, ...]
    slope_ms_per_record: float
    linear_r2: float

    def rows(self) -> List[Dict[str, Any]]:
        return [p.model_dump() for p in self.points]


def runtime_scaling(sizes: Sequence[int] = (1000, 2000, 4000), n_queries: int = 50,
                    seed: int = 0, k: int = DEFAULT_K) -> RuntimeReport:
    """Median single-query latency per index size and the R2 of a linear fit"""
    world = make_product_world(max(sizes) + n_queries, seed=seed)
    queries = [r.features for r in world[-n_queries:]]
    points = []
    for size in sizes:
        index = build_index(world[:size], "runtime")
        estimate(index, queries[0], k)
        timings = []
        for q in queries:
            start = time.perf_counter()
            estimate(index, q, k)
            timings.append((time.perf_counter() - start) * 1000.0)
        points.append(RuntimePoint(size=size, median_ms=float(np.median(timings))))

    x = np.array([p.size for p in points], dtype=float)
    y = np.array([p.median_ms for p in points])
    slope, intercept = np.polyfit(x, y, 1)
    fit_r2 = r2(slope * x + intercept, y) if len(points) > 2 else 1.0
    return RuntimeReport(n_queries=n_queries, points=tuple(points),
                         slope_ms_per_record=float(slope), linear_r2=fit_r2)


# ---------------------------------------------------------------------------
# Cross-company transfer
# ---------------------------------------------------------------------------


class TransferRow(Row):
    id: str
    true: float
    within: float
    cross: float
    cross_calibrated: float


class TransferReport(Report):
    k: int
    calibration_scale: float
    mape_within: float
    mape_cross: float
    mape_cross_calibrated: float
    records: Tuple[TransferRow, ...]

    def rows(self) -> List[Dict[str, Any]]:
        return [r.model_dump() for r in self.records]

    def ecdfs(self) -> Dict[str, ECDF]:
        truths = [r.true for r in self.records]
        return {
            name: ecdf(ape([getattr(r, name) for r in self.records], truths))
            for name in ("within", "cross", "cross_calibrated")
        }


def cross_company_eval(source: Sequence[IndexRecord], target: Sequence[IndexRecord], k: int = DEFAULT_K,
                       calibration_fraction: float = 0.2, seed: int = 0) -> TransferReport:
    """Estimate one company's products from another company's index

    A ``calibration_fraction`` of the target's reported values fits the
    median-ratio calibration and also serves as the within-company index;
    every remaining target record is scored three ways.
    """
    calib, evaluated = split_holdout(list(target), 1.0 - calibration_fraction, seed)
    transform = fit_calibration([r.target for r in source], [r.target for r in calib])
    cross_index = build_index(source, "cross")
    within_index = build_index(calib, "within")

    rows = []
    for record in evaluated:
        cross = estimate(cross_index, record.features, k)
        rows.append(TransferRow(
            id=record.id,
            true=record.target,
            within=estimate(within_index, record.features, k).mean,
            cross=cross.mean,
            cross_calibrated=apply_calibration(transform, cross).mean,
        ))
    truths = [r.true for r in rows]
    return TransferReport(
        k=k,
        calibration_scale=transform.scale,
        mape_within=mape([r.within for r in rows], truths),
        mape_cross=mape([r.cross for r in rows], truths),
        mape_cross_calibrated=mape([r.cross_calibrated for r in rows], truths),
        records=tuple(rows),
    )


__all__ = [
    "ape",
    "mape",
    "mae",
    "r2",
    "ECDF",
    "ecdf",
    "coverage",
    "class_multiplicity",
    "lci_f1",
    "lci_l1",
    "jsd",
    "lci_jsd",
    "HoldoutResult",
    "holdout_eval",
    "split_holdout",
    "FoldResult",
    "CVReport",
    "kfold_cv",
    "SweepPoint",
    "SweepReport",
    "scaling_sweep",
    "masking_sweep",
    "k_sweep",
    "BaselineScore",
    "BaselineReport",
    "compare_baselines",
    "RuntimePoint",
    "RuntimeReport",
    "runtime_scaling",
    "TransferRow",
    "TransferReport",
    "cross_company_eval",
]
