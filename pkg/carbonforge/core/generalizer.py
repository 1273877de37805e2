"""
Emission-factor generalizer.

Generates EFs for inventory entries the database does not cover by
reusing the kNN weighted Gaussian over class-specific feature vectors:

- grids: the eleven generation-source shares, CI in gCO2e/kWh
- raw materials: projected description embeddings, optionally followed by
  domain properties, with EFs estimated in log space
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .embeddings import EmbeddingProvider, TextProjector
from .errors import DataValidationError, EstimationError
from .estimator import DEFAULT_K, IndexRecord, TrainedIndex, build_index, estimate
from .evaluation import ape, mae, mape
from .ingestion import aggregate_regions
from .models import (
    MATERIAL_SCHEMA,
    EmissionFactor,
    EstimateDistribution,
    FeatureSpec,
    FeatureVector,
    GridRecord,
    grid_schema,
    make_schema,
)
from .reports import Report, Row
from .runner import run_parallel

logger = logging.getLogger(__name__)

MATERIAL_METHOD_TAG = "knn-gaussian-log"
TEXT_DIMS = 16

Mode = Literal["text_only", "text_plus_domain"]
MODES: Tuple[str, ...] = ("text_only", "text_plus_domain")

# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


def grid_feature_vector(rec: GridRecord) -> FeatureVector:
    return FeatureVector(schema=grid_schema(), values=dict(rec.source_shares.values))


def grid_index_records(records: Sequence[GridRecord], aggregate: bool = False) -> List[IndexRecord]:
    """One training point per record, id ``region`` (``region@date`` when dated)

    With ``aggregate`` daily records are first averaged per region.
    """
    if aggregate and any(r.date is not None for r in records):
        records = aggregate_regions(records)
    return [
        IndexRecord(
            id=rec.region if rec.date is None else f"{rec.region}@{rec.date.isoformat()}",
            features=grid_feature_vector(rec),
            target=rec.carbon_intensity_g_per_kwh,
        )
        for rec in records
    ]


def build_grid_index(records: Sequence[GridRecord], aggregate: bool = True) -> TrainedIndex:
    """Index over grid mixes; daily records are averaged per region first"""
    return build_index(grid_index_records(records, aggregate), category="grid")


def estimate_grid_ci(index: TrainedIndex, query: Union[FeatureVector, GridRecord],
                     k: int = DEFAULT_K) -> EstimateDistribution:
    if isinstance(query, GridRecord):
        query = grid_feature_vector(query)
    return estimate(index, query, k)


# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------


class MaterialEntry(BaseModel):
    """An EF together with the material's domain properties and text coordinates"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    ef: EmissionFactor
    domain_features: Optional[FeatureVector] = None
    text_coords: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def _check(self) -> "MaterialEntry":
        if self.domain_features is None and self.text_coords is None:
            raise ValueError(f"material {self.ef.id!r} needs domain features or text coordinates")
        if self.domain_features is not None and self.domain_features.specs != MATERIAL_SCHEMA:
            raise ValueError(f"material {self.ef.id!r} domain features do not use the material schema")
        return self

    @property
    def id(self) -> str:
        return self.ef.id


@lru_cache(maxsize=16)
def default_projector(in_dim: int, out_dim: int = TEXT_DIMS, seed: int = 0) -> TextProjector:
    return TextProjector(in_dim, out_dim, seed)


def text_coordinates(description: str, provider: EmbeddingProvider,
                     projector: Optional[TextProjector] = None) -> Tuple[float, ...]:
    if not description.strip():
        raise DataValidationError("text features need a non-empty description")
    projector = projector or default_projector(provider.dim)
    return tuple(float(x) for x in projector.project(provider.embed(description)))


def material_schema(mode: Mode, text_dims: int = TEXT_DIMS) -> Tuple[FeatureSpec, ...]:
    if mode not in MODES:
        raise DataValidationError(f"unknown material mode {mode!r}; expected one of {list(MODES)}")
    text = make_schema((f"text_{i:02d}", "numeric") for i in range(text_dims))
    return text + MATERIAL_SCHEMA if mode == "text_plus_domain" else text


def _entry_vector(entry: MaterialEntry, mode: Mode) -> FeatureVector:
    if entry.text_coords is None:
        raise DataValidationError(f"material {entry.id!r} has no text coordinates")
    schema = material_schema(mode, len(entry.text_coords))
    values: Dict[str, Any] = {f"text_{i:02d}": x for i, x in enumerate(entry.text_coords)}
    if mode == "text_plus_domain" and entry.domain_features is not None:
        values.update(entry.domain_features.values)
    return FeatureVector(schema=schema, values=values)


def material_entry(ef: EmissionFactor, provider: EmbeddingProvider,
                   projector: Optional[TextProjector] = None) -> MaterialEntry:
    """Embed the description; domain features come from ``ef.features`` when it uses the material schema"""
    domain = ef.features if ef.features is not None and ef.features.specs == MATERIAL_SCHEMA else None
    return MaterialEntry(ef=ef, domain_features=domain,
                         text_coords=text_coordinates(ef.description, provider, projector))


def material_entries(factors: Sequence[EmissionFactor], provider: EmbeddingProvider,
                     projector: Optional[TextProjector] = None) -> List[MaterialEntry]:
    return [material_entry(ef, provider, projector) for ef in factors]


def material_feature_vector(ef: EmissionFactor, provider: EmbeddingProvider, mode: Mode = "text_plus_domain",
                            projector: Optional[TextProjector] = None) -> FeatureVector:
    """Text coordinates ``text_00..`` and, in text_plus_domain mode, the four domain properties"""
    return _entry_vector(material_entry(ef, provider, projector), mode)


def estimate_material_ef(db: Sequence[MaterialEntry], query: MaterialEntry, k: int = DEFAULT_K,
                         mode: Mode = "text_plus_domain", mask_self: bool = True) -> EstimateDistribution:
    """Log-space kNN Gaussian over unit-compatible materials

    The query's own EF value is never read. With ``mask_self`` the db entry
    sharing the query's id is hidden; duplicates under other ids stay.
    Reports mean = exp(mu) and std = mean * sigma.
    """
    pool = [
        entry for entry in db
        if entry.ef.unit == query.ef.unit and not (mask_self and entry.id == query.id)
    ]
    if len(pool) < k:
        raise EstimationError(
            f"{len(pool)} unit-compatible materials available for {query.id!r}, k={k} requested"
        )
    index = build_index(
        [IndexRecord(id=e.id, features=_entry_vector(e, mode), target=math.log(e.ef.kgco2e_per_unit))
         for e in pool],
        category=f"material:{query.ef.unit}",
    )
    log_est = estimate(index, _entry_vector(query, mode), k)
    mean = math.exp(log_est.mean)
    return EstimateDistribution.from_moments(mean, mean * log_est.std, log_est.neighbors, MATERIAL_METHOD_TAG)


class MaskedEntryRow(Row):
    id: str
    true_ef: float
    estimate: float
    std: float
    ape: float
    neighbor_ids: Tuple[str, ...]


class MaskedBenchmarkReport(Report):
    mode: str
    k: int
    seed: int
    n_masked: int
    entries: Tuple[MaskedEntryRow, ...]
    mape: float
    mae: float
    mape_filtered: float
    mae_filtered: float
    outliers: Tuple[str, ...]

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {**row.model_dump(exclude={'neighbor_ids'}), 'neighbor_ids': ";".join(row.neighbor_ids)}
            for row in self.entries
        ]


def run_masked_benchmark(db: Sequence[MaterialEntry], n_masked: int, k: int = DEFAULT_K,
                         mode: Mode = "text_plus_domain", seed: int = 0,
                         max_workers: int = 1) -> MaskedBenchmarkReport:
    """Hide ``n_masked`` seeded entries one at a time and estimate each from the rest

    Aggregates are reported raw and with APE outliers (outside mean ± 3 sd)
    removed.
    """
    db = list(db)
    if not 0 < n_masked <= len(db):
        raise DataValidationError(f"n_masked must be in [1, {len(db)}], got {n_masked}")
    chosen = sorted(np.random.default_rng(seed).choice(len(db), size=n_masked, replace=False))

    def _one(i: int) -> MaskedEntryRow:
        entry = db[i]
        est = estimate_material_ef(db, entry, k, mode)
        return MaskedEntryRow(
            id=entry.id,
            true_ef=entry.ef.kgco2e_per_unit,
            estimate=est.mean,
            std=est.std,
            ape=float(ape([est.mean], [entry.ef.kgco2e_per_unit])[0]),
            neighbor_ids=tuple(n.record_id for n in est.neighbors),
        )

    rows = run_parallel(_one, chosen, max_workers)
    apes = np.array([r.ape for r in rows])
    center, spread = float(apes.mean()), float(apes.std())
    keep = [r for r in rows if abs(r.ape - center) <= 3 * spread]
    outliers = tuple(r.id for r in rows if abs(r.ape - center) > 3 * spread)
    if outliers:
        logger.info("masked benchmark: %d outlier(s) beyond ±3 sd: %s", len(outliers), ", ".join(outliers))

    def _agg(subset: Sequence[MaskedEntryRow]) -> Tuple[float, float]:
        pred, true = [r.estimate for r in subset], [r.true_ef for r in subset]
        return mape(pred, true), mae(pred, true)

    raw_mape, raw_mae = _agg(rows)
    filt_mape, filt_mae = _agg(keep)
    return MaskedBenchmarkReport(
        mode=mode, k=k, seed=seed, n_masked=n_masked, entries=tuple(rows),
        mape=raw_mape, mae=raw_mae, mape_filtered=filt_mape, mae_filtered=filt_mae,
        outliers=outliers,
    )


__all__ = [
    "MATERIAL_METHOD_TAG",
    "TEXT_DIMS",
    "MODES",
    "grid_feature_vector",
    "grid_index_records",
    "build_grid_index",
    "estimate_grid_ci",
    "MaterialEntry",
    "default_projector",
    "text_coordinates",
    "material_schema",
    "material_entry",
    "material_entries",
    "material_feature_vector",
    "estimate_material_ef",
    "MaskedEntryRow",
    "MaskedBenchmarkReport",
    "run_masked_benchmark",
]
