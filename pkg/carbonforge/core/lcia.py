"""
Life-cycle impact assessment.

Each inventory entry is matched to the most similar emission factor of the
same unit (cosine similarity of embedded descriptions). Entries whose best
match falls below the threshold are handed to the generalizer when
fallback is on, and their estimate's variance is rolled into the total.
"""
from __future__ import annotations

import logging
import math
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .embeddings import EmbeddingProvider, cosine_similarities
from .errors import DataValidationError, EstimationError, UnmatchedEntriesError
from .estimator import DEFAULT_K, TrainedIndex
from .generalizer import (
    MaterialEntry,
    Mode,
    estimate_grid_ci,
    estimate_material_ef,
    material_entries,
    text_coordinates,
)
from .ingestion import load_efdb
from .models import (
    GENERATED,
    GRID_SOURCES,
    MATERIAL_SCHEMA,
    CFBreakdown,
    EmissionFactor,
    EntryContribution,
    EstimateDistribution,
    FeatureSpec,
    FeatureVector,
    InventoryEntry,
    LifeCycleInventory,
    ProductRecord,
    grid_schema,
    validate_inventory,
)
from .reports import Report

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.6


class EmissionFactorDB:
    """EF list with per-unit embedding matrices, built on first use

    Within a unit the factors are kept in id order, so ``argmax`` breaks
    similarity ties towards the smallest id.
    """

    def __init__(self, factors: Sequence[EmissionFactor], provider: EmbeddingProvider):
        ids = [f.id for f in factors]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataValidationError(f"duplicate emission factor ids: {dupes}")
        self.provider = provider
        self.factors: Tuple[EmissionFactor, ...] = tuple(sorted(factors, key=lambda f: f.id))
        self._by_id = {f.id: f for f in self.factors}
        self._matrices: Dict[str, Tuple[Tuple[EmissionFactor, ...], np.ndarray]] = {}
        self._materials: Dict[str, List[MaterialEntry]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_path(cls, path: Union[str, Path], provider: EmbeddingProvider) -> "EmissionFactorDB":
        parsed = load_efdb(path)
        if parsed.rejected:
            raise DataValidationError(
                f"{len(parsed.rejected)} invalid line(s) in {path}",
                details={'rejected': [r.model_dump() for r in parsed.rejected]},
            )
        return cls(parsed.records, provider)

    def __len__(self) -> int:
        return len(self.factors)

    def __contains__(self, ef_id: object) -> bool:
        return ef_id in self._by_id

    def get(self, ef_id: str) -> EmissionFactor:
        return self._by_id[ef_id]

    @property
    def units(self) -> Tuple[str, ...]:
        return tuple(sorted({f.unit for f in self.factors}))

    def candidates(self, unit: str) -> Tuple[Tuple[EmissionFactor, ...], np.ndarray]:
        with self._lock:
            if unit not in self._matrices:
                subset = tuple(f for f in self.factors if f.unit == unit)
                self._matrices[unit] = (subset, self.provider.embed_many(f.description for f in subset))
            return self._matrices[unit]

    def materials(self, unit: str) -> List[MaterialEntry]:
        """Unit-compatible factors as generalizer entries (text coordinates embedded once)"""
        with self._lock:
            if unit not in self._materials:
                subset = [f for f in self.factors if f.unit == unit and f.description.strip()]
                self._materials[unit] = material_entries(subset, self.provider)
            return self._materials[unit]


class MatchResult(BaseModel):
    """Outcome of matching one entry

    ``best_id``/``similarity`` name the closest unit-compatible factor even
    when the decision is ``generate``; both are None when no factor shares
    the entry's unit.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    decision: Literal["match", "generate"]
    ef_id: Optional[str] = None
    best_id: Optional[str] = None
    similarity: Optional[float] = None


def _entry_text(entry: InventoryEntry) -> str:
    return entry.description.strip() or entry.component_class


def match_entry(entry: InventoryEntry, db: EmissionFactorDB, threshold: float = DEFAULT_THRESHOLD,
                fallback: bool = False) -> MatchResult:
    if not 0.0 <= threshold <= 1.0:
        raise DataValidationError(f"threshold must be in [0, 1], got {threshold}")
    if len(db) == 0:
        raise DataValidationError("emission factor database is empty")

    factors, matrix = db.candidates(entry.unit)
    if not factors:
        if fallback:
            return MatchResult(decision="generate")
        raise UnmatchedEntriesError([-1], [f"{_entry_text(entry)!r}: no emission factor with unit {entry.unit!r}"])

    sims = cosine_similarities(db.provider.embed(_entry_text(entry)), matrix)
    best = int(np.argmax(sims))
    similarity = float(sims[best])
    if similarity >= threshold:
        return MatchResult(decision="match", ef_id=factors[best].id, best_id=factors[best].id,
                           similarity=similarity)
    return MatchResult(decision="generate", best_id=factors[best].id, similarity=similarity)


def _feature_values(entry: InventoryEntry, schema: Sequence[FeatureSpec]) -> Dict[str, Any]:
    """Entry attributes typed for ``schema``

    Numeric features accept numeric strings; anything else that does not
    parse to a finite number is treated as missing.
    """
    values: Dict[str, Any] = {}
    for spec in schema:
        value = entry.attributes.get(spec.name)
        if value is not None and spec.kind == "numeric":
            try:
                value = float(value)
            except (TypeError, ValueError):
                value = math.nan
            if not math.isfinite(value):
                logger.warning("ignoring non-numeric attribute %s=%r of %r", spec.name,
                               entry.attributes[spec.name], _entry_text(entry))
                value = None
        values[spec.name] = value
    return values


class EFGenerator:
    """Generated EFs for entries without a database match

    ``kWh`` entries carrying source-share attributes go to the grid index
    (CI converted from g to kg); everything else is estimated from the
    unit-compatible factors in the database.
    """

    def __init__(self, db: EmissionFactorDB, k: int = DEFAULT_K, mode: Mode = "text_plus_domain",
                 grid_index: Optional[TrainedIndex] = None):
        self.db = db
        self.k = k
        self.mode = mode
        self.grid_index = grid_index

    def _grid_query(self, entry: InventoryEntry) -> Optional[FeatureVector]:
        shares = _feature_values(entry, grid_schema())
        if not any(v is not None for v in shares.values()):
            return None
        return FeatureVector(schema=grid_schema(), values=shares)

    def generate(self, entry: InventoryEntry) -> EstimateDistribution:
        if entry.unit == "kWh" and self.grid_index is not None:
            query = self._grid_query(entry)
            if query is not None:
                ci = estimate_grid_ci(self.grid_index, query, self.k)
                return EstimateDistribution.from_moments(ci.mean / 1000.0, ci.std / 1000.0,
                                                         ci.neighbors, ci.method_tag)

        pool = self.db.materials(entry.unit)
        if not pool:
            raise EstimationError(f"no unit-compatible factors to generalize from for unit {entry.unit!r}")
        domain_values = _feature_values(entry, MATERIAL_SCHEMA)
        domain = FeatureVector(schema=MATERIAL_SCHEMA, values=domain_values) \
            if any(v is not None for v in domain_values.values()) else None
        query = MaterialEntry(
            ef=EmissionFactor(id=f"{GENERATED}:{_entry_text(entry)}", description=_entry_text(entry),
                              isic_class="", unit=entry.unit, kgco2e_per_unit=1.0),  # type: ignore[arg-type]
            domain_features=domain,
            text_coords=text_coordinates(_entry_text(entry), self.db.provider),
        )
        return estimate_material_ef(pool, query, min(self.k, len(pool)), self.mode, mask_self=False)


def assess(lci: LifeCycleInventory, db: EmissionFactorDB, threshold: float = DEFAULT_THRESHOLD,
           fallback: bool = False, generator: Optional[EFGenerator] = None) -> CFBreakdown:
    """Multiply every entry by its matched or generated EF and sum

    Generated EFs are treated as independent: the total std is the root of
    the summed per-entry variances.
    """
    violations = validate_inventory(lci)
    if violations:
        raise DataValidationError(
            f"inventory has {len(violations)} violation(s): " + "; ".join(v.message for v in violations),
            details={'violations': [v.model_dump() for v in violations]},
        )
    if fallback and generator is None:
        generator = EFGenerator(db)

    contributions: List[EntryContribution] = []
    variances: List[float] = []
    unmatched: List[Tuple[int, str]] = []
    for i, entry in enumerate(lci.entries):
        try:
            result = match_entry(entry, db, threshold, fallback)
        except UnmatchedEntriesError as exc:
            unmatched.append((i, exc.details['reasons'][0]))
            continue

        if result.decision == "match":
            ef = db.get(result.ef_id)  # type: ignore[arg-type]
            contributions.append(EntryContribution(
                entry_index=i, ef_id=ef.id, contribution_kgco2e=entry.quantity * ef.kgco2e_per_unit,
                similarity=result.similarity,
            ))
            continue

        if not fallback or generator is None:
            unmatched.append((i, f"{_entry_text(entry)!r}: best similarity "
                                 f"{result.similarity:.3f} below {threshold}"))
            continue
        try:
            est = generator.generate(entry)
        except EstimationError as exc:
            unmatched.append((i, f"{_entry_text(entry)!r}: {exc.message}"))
            continue
        logger.debug("entry #%d generated EF %.6g ± %.3g (%s)", i, est.mean, est.std, est.method_tag)
        contributions.append(EntryContribution(
            entry_index=i, ef_id=GENERATED, contribution_kgco2e=entry.quantity * est.mean,
            similarity=result.similarity, estimate=est,
        ))
        variances.append((entry.quantity * est.std) ** 2)

    if unmatched:
        raise UnmatchedEntriesError([i for i, _ in unmatched], [r for _, r in unmatched])

    per_class: Dict[str, List[float]] = defaultdict(list)
    for c in contributions:
        per_class[lci.entries[c.entry_index].component_class].append(c.contribution_kgco2e)
    return CFBreakdown(
        total_kgco2e=math.fsum(c.contribution_kgco2e for c in contributions),
        total_std_kgco2e=math.sqrt(math.fsum(variances)),
        per_entry=tuple(contributions),
        per_class={cls: math.fsum(values) for cls, values in sorted(per_class.items())},
    )


# ---------------------------------------------------------------------------
# Deviation from reported footprints
# ---------------------------------------------------------------------------


class ClassShare(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    component_class: str
    kgco2e: float
    share: float


class DeviationReport(Report):
    product: str
    estimated_kgco2e: float
    reported_kgco2e: float = Field(gt=0)
    signed_error_kgco2e: float
    ape: float
    classes: Tuple[ClassShare, ...] = ()

    def rows(self) -> List[Dict[str, Any]]:
        return [{'product': self.product, 'estimated_kgco2e': self.estimated_kgco2e,
                 'reported_kgco2e': self.reported_kgco2e,
                 'signed_error_kgco2e': self.signed_error_kgco2e, 'ape': self.ape}]


def compare_to_reported(breakdown: CFBreakdown, reported: ProductRecord) -> DeviationReport:
    estimated = breakdown.total_kgco2e
    truth = reported.reported_cf_kgco2e
    total = estimated if estimated > 0 else 1.0
    classes = sorted(breakdown.per_class.items(), key=lambda kv: (-kv[1], kv[0]))
    return DeviationReport(
        product=reported.id,
        estimated_kgco2e=estimated,
        reported_kgco2e=truth,
        signed_error_kgco2e=estimated - truth,
        ape=abs(estimated - truth) / truth * 100.0,
        classes=tuple(ClassShare(component_class=c, kgco2e=v, share=v / total) for c, v in classes),
    )


class FleetDeviationReport(Report):
    reports: Tuple[DeviationReport, ...]

    def rows(self) -> List[Dict[str, Any]]:
        return [{'rank': i + 1, **r.rows()[0]} for i, r in enumerate(self.reports)]

    def top(self, n: int = 3) -> List[DeviationReport]:
        return list(self.reports[:n])

    def bottom(self, n: int = 3) -> List[DeviationReport]:
        return list(self.reports[-n:]) if n else []


def rank_deviations(reports: Sequence[DeviationReport]) -> FleetDeviationReport:
    """Largest APE first; ties by product name"""
    return FleetDeviationReport(reports=tuple(sorted(reports, key=lambda r: (-r.ape, r.product))))


__all__ = [
    "DEFAULT_THRESHOLD",
    "EmissionFactorDB",
    "MatchResult",
    "match_entry",
    "EFGenerator",
    "assess",
    "ClassShare",
    "DeviationReport",
    "compare_to_reported",
    "FleetDeviationReport",
    "rank_deviations",
]
