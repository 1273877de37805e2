"""
kNN weighted Gaussian estimator.

A linear scan over the index: distances to every record, an O(n) partition
for the k-th distance, then a (distance, id) sort of the few candidates.
Neighbors are weighted by attribute completeness (floored at 1/d) and a
Gaussian is fitted to their targets.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DataValidationError, EstimationError
from .models import (
    EstimateDistribution,
    FeatureSpec,
    FeatureVector,
    NeighborRef,
    ProductRecord,
    completeness,
)
from .serialization import read_json, write_json

logger = logging.getLogger(__name__)

METHOD_TAG = "knn-weighted-gaussian"
DEFAULT_K = 5

_MISSING_CODE = -1
_UNSEEN_CODE = -2

Normalization = Dict[str, Tuple[float, float]]


class IndexRecord(BaseModel):
    """One training point: an id, its features and the target value"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(min_length=1)
    features: FeatureVector
    target: float = Field(allow_inf_nan=False)


class CalibrationTransform(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    scale: float = Field(1.0, gt=0, allow_inf_nan=False)
    shift: float = Field(0.0, allow_inf_nan=False)

    def __call__(self, value: float) -> float:
        return self.scale * value + self.shift


@dataclass(frozen=True)
class TrainedIndex:
    """Immutable estimator index

    ``records`` and ``normalization`` define the index; the arrays are
    derived from them and excluded from equality.
    """

    records: Tuple[IndexRecord, ...]
    category: str
    specs: Tuple[FeatureSpec, ...]
    normalization: Normalization
    numeric_names: Tuple[str, ...] = field(repr=False)
    categorical_names: Tuple[str, ...] = field(repr=False)
    vocab: Dict[str, Dict[str, int]] = field(repr=False, compare=False)
    num_z: np.ndarray = field(repr=False, compare=False)
    cat_codes: np.ndarray = field(repr=False, compare=False)
    targets: np.ndarray = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)
    id_rank: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def size(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return len(self.specs)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def _normalization(records: Sequence[IndexRecord], names: Sequence[str]) -> Normalization:
    stats: Normalization = {}
    for name in names:
        column = np.array(
            [r.features.values[name] for r in records if r.features.values[name] is not None],
            dtype=float,
        )
        if column.size == 0:
            stats[name] = (0.0, 1.0)
            continue
        mean = float(column.mean())
        std = float(column.std())
        if not math.isfinite(std) or std == 0.0:
            std = 1.0
        stats[name] = (mean, std)
    return stats


def _zscore(values: Mapping[str, object], names: Sequence[str], norm: Normalization) -> np.ndarray:
    out = np.full(len(names), np.nan)
    for j, name in enumerate(names):
        value = values.get(name)
        if value is not None:
            mean, std = norm[name]
            out[j] = (float(value) - mean) / std  # type: ignore[arg-type]
    return out


def _encode(values: Mapping[str, object], names: Sequence[str],
            vocab: Mapping[str, Mapping[str, int]]) -> np.ndarray:
    out = np.full(len(names), _MISSING_CODE, dtype=np.int64)
    for j, name in enumerate(names):
        value = values.get(name)
        if value is not None:
            out[j] = vocab[name].get(str(value), _UNSEEN_CODE)
    return out


def build_index(records: Sequence[IndexRecord], category: str = "default") -> TrainedIndex:
    """Store records verbatim together with per-numeric normalization stats"""
    records = tuple(records)
    if not records:
        raise DataValidationError("cannot build an index from zero records")

    specs = records[0].features.specs
    for r in records[1:]:
        if r.features.specs != specs:
            raise DataValidationError(
                f"record {r.id!r} does not share the index feature schema",
                details={'record': r.id},
            )
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DataValidationError(f"duplicate record ids: {dupes}", details={'ids': dupes})

    numeric = tuple(s.name for s in specs if s.kind == "numeric")
    categorical = tuple(s.name for s in specs if s.kind == "categorical")
    norm = _normalization(records, numeric)

    vocab: Dict[str, Dict[str, int]] = {}
    for name in categorical:
        seen = sorted({str(r.features.values[name]) for r in records if r.features.values[name] is not None})
        vocab[name] = {value: code for code, value in enumerate(seen)}

    n = len(records)
    num_z = np.vstack([_zscore(r.features.values, numeric, norm) for r in records]) if numeric \
        else np.zeros((n, 0))
    cat_codes = np.vstack([_encode(r.features.values, categorical, vocab) for r in records]) \
        if categorical else np.zeros((n, 0), dtype=np.int64)

    d = len(specs)
    floor = 1.0 / d if d else 1.0
    weights = np.array([max(completeness(r.features), floor) for r in records]) if d \
        else np.ones(n)

    id_rank = np.empty(n, dtype=np.int64)
    id_rank[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(n)

    logger.debug("built %s index: %d records, %d features", category, n, d)
    return TrainedIndex(
        records=records,
        category=category,
        specs=specs,
        normalization=norm,
        numeric_names=numeric,
        categorical_names=categorical,
        vocab=vocab,
        num_z=num_z,
        cat_codes=cat_codes,
        targets=np.array([r.target for r in records], dtype=float),
        weights=weights,
        id_rank=id_rank,
    )


def add_record(index: TrainedIndex, record: IndexRecord) -> TrainedIndex:
    """New index over the union; stats are recomputed, nothing is patched"""
    if record.features.specs != index.specs:
        raise DataValidationError(
            f"record {record.id!r} does not match the index feature schema",
            details={'record': record.id},
        )
    return build_index(index.records + (record,), index.category)


def index_records(products: Sequence[ProductRecord]) -> List[IndexRecord]:
    """Products as estimator training points (id ``company/name``)"""
    return [
        IndexRecord(id=p.id, features=p.features, target=p.reported_cf_kgco2e)
        for p in products
    ]


# ---------------------------------------------------------------------------
# Distance
# ---------------------------------------------------------------------------

def _kernel(num_rows: np.ndarray, cat_rows: np.ndarray,
            qz: np.ndarray, qc: np.ndarray, d: int) -> np.ndarray:
    """Rescaled Euclidean distance of every row to the query; +inf with no overlap"""
    n = num_rows.shape[0]
    sq = np.zeros(n)
    shared = np.zeros(n, dtype=np.int64)

    if num_rows.shape[1]:
        diff = num_rows - qz
        present = ~np.isnan(diff)
        sq += np.where(present, diff * diff, 0.0).sum(axis=1)
        shared += present.sum(axis=1)

    if cat_rows.shape[1]:
        present_c = (cat_rows != _MISSING_CODE) & (qc != _MISSING_CODE)
        sq += (present_c & (cat_rows != qc)).sum(axis=1)
        shared += present_c.sum(axis=1)

    out = np.full(n, np.inf)
    ok = shared > 0
    out[ok] = np.sqrt(sq[ok] * d / shared[ok])
    return out


def distance(a: FeatureVector, b: FeatureVector, norm: Normalization) -> float:
    """Distance over mutually present features, rescaled by sqrt(d/|S|)

    Numeric features are z-scored with ``norm``; categorical features add 0
    when equal and 1 otherwise. Returns ``inf`` when nothing is shared.
    """
    if not a.same_schema(b):
        raise DataValidationError("distance needs vectors sharing one schema")
    numeric = [s.name for s in a.specs if s.kind == "numeric"]
    categorical = [s.name for s in a.specs if s.kind == "categorical"]

    vocab: Dict[str, Dict[str, int]] = {}
    for name in categorical:
        seen = sorted({str(v) for v in (a.values[name], b.values[name]) if v is not None})
        vocab[name] = {value: code for code, value in enumerate(seen)}

    num_rows = _zscore(a.values, numeric, norm).reshape(1, -1)
    cat_rows = _encode(a.values, categorical, vocab).reshape(1, -1)
    qz = _zscore(b.values, numeric, norm)
    qc = _encode(b.values, categorical, vocab)
    return float(_kernel(num_rows, cat_rows, qz, qc, len(a.specs))[0])


def _query_arrays(index: TrainedIndex, query: FeatureVector) -> Tuple[np.ndarray, np.ndarray]:
    if query.specs != index.specs:
        raise DataValidationError(
            "query schema does not match the index schema",
            details={'index': [s.name for s in index.specs], 'query': list(query.names)},
        )
    qz = _zscore(query.values, index.numeric_names, index.normalization)
    qc = _encode(query.values, index.categorical_names, index.vocab)
    return qz, qc


def distances(index: TrainedIndex, query: FeatureVector) -> np.ndarray:
    """Distance from ``query`` to every record, in record order"""
    qz, qc = _query_arrays(index, query)
    return _kernel(index.num_z, index.cat_codes, qz, qc, index.dim)


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def select_neighbors(index: TrainedIndex, dist: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k nearest reachable records, ordered by (distance, id)"""
    if k < 1:
        raise EstimationError(f"k must be positive, got {k}")
    reachable = np.flatnonzero(np.isfinite(dist))
    if reachable.size == 0:
        raise EstimationError("query disjoint from index schema")
    k = min(k, reachable.size)

    candidates = reachable
    if k < reachable.size:
        kth = np.partition(dist[reachable], k - 1)[k - 1]
        candidates = reachable[dist[reachable] <= kth]
    order = np.lexsort((index.id_rank[candidates], dist[candidates]))
    return candidates[order[:k]]


def weighted_gaussian(targets: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    """Weighted mean and biased weighted std"""
    p = weights / weights.sum()
    mean = float(np.dot(p, targets))
    var = float(np.dot(p, (targets - mean) ** 2))
    return mean, math.sqrt(max(var, 0.0))


def estimate(index: TrainedIndex, query: FeatureVector, k: int = DEFAULT_K,
             method_tag: str = METHOD_TAG) -> EstimateDistribution:
    """Fit a Gaussian to the targets of the k nearest records"""
    dist = distances(index, query)
    chosen = select_neighbors(index, dist, k)
    w = index.weights[chosen]
    mean, std = weighted_gaussian(index.targets[chosen], w)
    neighbors = [
        NeighborRef(record_id=index.records[i].id, distance=float(dist[i]), weight=float(wi))
        for i, wi in zip(chosen, w)
    ]
    return EstimateDistribution.from_moments(mean, std, neighbors, method_tag)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def fit_calibration(source_targets: Sequence[float], target_targets: Sequence[float]) -> CalibrationTransform:
    """Median-ratio scaling from one company's distribution onto another's"""
    if len(source_targets) == 0 or len(target_targets) == 0:
        raise EstimationError("calibration needs non-empty source and target lists")
    source_median = float(np.median(np.asarray(source_targets, dtype=float)))
    target_median = float(np.median(np.asarray(target_targets, dtype=float)))
    if source_median <= 0 or target_median <= 0:
        raise EstimationError(
            f"calibration needs positive medians (source={source_median}, target={target_median})"
        )
    return CalibrationTransform(scale=target_median / source_median, shift=0.0)


def apply_calibration(t: CalibrationTransform, e: EstimateDistribution) -> EstimateDistribution:
    return EstimateDistribution.from_moments(
        t.scale * e.mean + t.shift, t.scale * e.std, e.neighbors, e.method_tag
    )


def compose_calibration(first: CalibrationTransform, then: CalibrationTransform) -> CalibrationTransform:
    """``then`` applied after ``first``"""
    return CalibrationTransform(scale=then.scale * first.scale, shift=then.scale * first.shift + then.shift)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def index_to_dict(index: TrainedIndex) -> Dict[str, object]:
    return {
        'category': index.category,
        'schema': [s.model_dump() for s in index.specs],
        'normalization': {name: list(stats) for name, stats in index.normalization.items()},
        'records': [r.model_dump(mode="json") for r in index.records],
    }


def save_index(index: TrainedIndex, path: Union[str, Path]) -> Path:
    return write_json(path, index_to_dict(index))


def index_from_dict(data: Mapping[str, object]) -> TrainedIndex:
    try:
        records = [IndexRecord.model_validate(r) for r in data['records']]  # type: ignore[union-attr]
        category = str(data.get('category', 'default'))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"invalid index snapshot: {exc}") from exc

    index = build_index(records, category)
    stored = data.get('normalization') or {}
    for name, (mean, std) in index.normalization.items():
        saved = stored.get(name)  # type: ignore[union-attr]
        if saved is None or not (math.isclose(saved[0], mean, rel_tol=1e-9, abs_tol=1e-12)
                                 and math.isclose(saved[1], std, rel_tol=1e-9, abs_tol=1e-12)):
            logger.warning(
                "snapshot normalization for %r differs from the recomputed value; using recomputed", name
            )
    return index


def load_index(path: Union[str, Path]) -> TrainedIndex:
    return index_from_dict(read_json(path))


__all__ = [
    "METHOD_TAG",
    "DEFAULT_K",
    "IndexRecord",
    "CalibrationTransform",
    "TrainedIndex",
    "build_index",
    "add_record",
    "index_records",
    "distance",
    "distances",
    "select_neighbors",
    "weighted_gaussian",
    "estimate",
    "fit_calibration",
    "apply_calibration",
    "compose_calibration",
    "index_to_dict",
    "index_from_dict",
    "save_index",
    "load_index",
]
