"""
Carbonforge domain types.

Every type here is an immutable pydantic model. MISSING is ``None`` and
serializes as ``null``. No I/O and no algorithms live in this module beyond
construction-time validation, ``validate_inventory`` and ``completeness``.
"""
from __future__ import annotations

import datetime as dt
import math
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    SerializerFunctionWrapHandler,
    field_validator,
    model_serializer,
    model_validator,
)

from .errors import DataValidationError

MISSING = None
UNITS: Tuple[str, ...] = ("count", "gram", "mm2", "kWh")
CATEGORIES: Tuple[str, ...] = ("desktop", "display", "laptop", "phone", "other")
GRID_SOURCES: Tuple[str, ...] = (
    "nuclear", "wind", "hydro", "solar", "coal", "gas",
    "oil", "biomass", "geothermal", "battery_discharge", "unknown",
)
MODALITIES: Tuple[str, ...] = ("text", "image", "pdf-extract")
CI_Z = 1.96
GENERATED = "generated"

Unit = Literal["count", "gram", "mm2", "kWh"]
FeatureKind = Literal["numeric", "categorical"]
FeatureValue = Union[float, str, None]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# ---------------------------------------------------------------------------
# Feature vectors
# ---------------------------------------------------------------------------

class FeatureSpec(_Frozen):
    name: str = Field(min_length=1)
    kind: FeatureKind


def make_schema(pairs: Iterable[Tuple[str, str]]) -> Tuple[FeatureSpec, ...]:
    """Build a schema from ``(name, kind)`` pairs"""
    return tuple(FeatureSpec(name=name, kind=kind) for name, kind in pairs)


class FeatureVector(_Frozen):
    """Named, typed attributes with explicit MISSING support

    ``values`` always carries every schema name, in schema order; absent
    names are filled with MISSING on construction.
    """

    specs: Tuple[FeatureSpec, ...] = Field(alias="schema")
    values: Dict[str, FeatureValue] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    @model_validator(mode="before")
    @classmethod
    def _normalize(cls, data: Any) -> Any:
        if not isinstance(data, Mapping):
            return data
        raw_schema = data.get("schema", data.get("specs", ()))
        specs = [
            spec if isinstance(spec, FeatureSpec) else FeatureSpec.model_validate(spec)
            for spec in raw_schema
        ]
        names = [spec.name for spec in specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in schema: {names}")

        raw_values = dict(data.get("values") or {})
        unknown = sorted(set(raw_values) - set(names))
        if unknown:
            raise ValueError(f"values reference names outside the schema: {unknown}")

        values: Dict[str, FeatureValue] = {}
        for spec in specs:
            value = raw_values.get(spec.name)
            if value is None:
                values[spec.name] = None
            elif spec.kind == "numeric":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValueError(f"feature {spec.name!r} is numeric, got {value!r}")
                if not math.isfinite(float(value)):
                    raise ValueError(f"feature {spec.name!r} is not finite: {value!r}")
                values[spec.name] = float(value)
            else:
                values[spec.name] = str(value)
        return {"schema": tuple(specs), "values": values}

    @model_serializer(mode="wrap")
    def _serialize(self, handler: SerializerFunctionWrapHandler) -> Dict[str, Any]:
        data = handler(self)
        if "specs" in data:
            data["schema"] = data.pop("specs")
        return data

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(spec.name for spec in self.specs)

    def kind(self, name: str) -> str:
        for spec in self.specs:
            if spec.name == name:
                return spec.kind
        raise KeyError(name)

    def get(self, name: str) -> FeatureValue:
        return self.values.get(name)

    @property
    def present_count(self) -> int:
        return sum(1 for value in self.values.values() if value is not None)

    def same_schema(self, other: "FeatureVector") -> bool:
        return self.specs == other.specs

    def replace(self, **values: FeatureValue) -> "FeatureVector":
        merged = dict(self.values)
        merged.update(values)
        return FeatureVector(schema=self.specs, values=merged)

    def masked(self, names: Iterable[str]) -> "FeatureVector":
        hidden = set(names)
        return FeatureVector(
            schema=self.specs,
            values={k: (None if k in hidden else v) for k, v in self.values.items()},
        )


def completeness(v: FeatureVector) -> float:
    """Fraction of schema features carrying a present value"""
    if not v.specs:
        raise DataValidationError("degenerate schema")
    return v.present_count / len(v.specs)


# ---------------------------------------------------------------------------
# Inventories
# ---------------------------------------------------------------------------

class DataAbstraction(_Frozen):
    product_class: str = Field(min_length=1)
    component_classes: Tuple[str, ...]
    required_attributes: Dict[str, Tuple[str, ...]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "DataAbstraction":
        if not self.component_classes:
            raise ValueError("component_classes must be non-empty")
        if len(set(self.component_classes)) != len(self.component_classes):
            raise ValueError(f"duplicate component classes: {list(self.component_classes)}")
        owner: Dict[str, str] = {}
        for cls_name, attrs in self.required_attributes.items():
            if cls_name not in self.component_classes:
                raise ValueError(f"required attributes declared for unknown class {cls_name!r}")
            for attr in attrs:
                if attr in owner:
                    raise ValueError(
                        f"attribute {attr!r} required by both {owner[attr]!r} and {cls_name!r}"
                    )
                owner[attr] = cls_name
        return self

    def required_for(self, component_class: str) -> Tuple[str, ...]:
        return self.required_attributes.get(component_class, ())


class InventoryEntry(_Frozen):
    """One LCI row

    Quantity sign, unit membership and DA membership are reported by
    ``validate_inventory`` rather than rejected here.
    """

    component_class: str
    description: str = ""
    quantity: float
    unit: str
    attributes: Dict[str, Union[str, float, None]] = Field(default_factory=dict)

    def attribute_missing(self, name: str) -> bool:
        return self.attributes.get(name) is None

    def scaled(self, factor: float) -> "InventoryEntry":
        return self.model_copy(update={'quantity': self.quantity * factor})


class LifeCycleInventory(_Frozen):
    product: str
    da: DataAbstraction
    entries: Tuple[InventoryEntry, ...] = ()
    provenance: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check_provenance(self) -> "LifeCycleInventory":
        if len(self.provenance) != len(self.entries):
            raise ValueError(
                f"provenance has {len(self.provenance)} tags for {len(self.entries)} entries"
            )
        return self

    def with_entry(self, entry: InventoryEntry, source: str) -> "LifeCycleInventory":
        return self.model_copy(update={
            'entries': self.entries + (entry,),
            'provenance': self.provenance + (source,),
        })

    def entries_of(self, component_class: str) -> List[InventoryEntry]:
        return [e for e in self.entries if e.component_class == component_class]


class InventoryViolation(_Frozen):
    entry_index: int
    rule: Literal["da_membership", "unit", "quantity"]
    message: str


def validate_inventory(lci: LifeCycleInventory) -> List[InventoryViolation]:
    """Report every entry that breaks DA membership, the unit set or the quantity sign"""
    violations: List[InventoryViolation] = []
    allowed = set(lci.da.component_classes)
    for i, entry in enumerate(lci.entries):
        if entry.component_class not in allowed:
            violations.append(InventoryViolation(
                entry_index=i, rule="da_membership",
                message=f"entry #{i} ({entry.description!r}) has class {entry.component_class!r} "
                        f"outside the {lci.da.product_class} data abstraction",
            ))
        if entry.unit not in UNITS:
            violations.append(InventoryViolation(
                entry_index=i, rule="unit",
                message=f"entry #{i} ({entry.description!r}) has unit {entry.unit!r}, "
                        f"expected one of {list(UNITS)}",
            ))
        if not (math.isfinite(entry.quantity) and entry.quantity >= 0):
            violations.append(InventoryViolation(
                entry_index=i, rule="quantity",
                message=f"entry #{i} ({entry.description!r}) has quantity {entry.quantity}",
            ))
    return violations


# ---------------------------------------------------------------------------
# Emission factors, products, grids, documents
# ---------------------------------------------------------------------------

class EmissionFactor(_Frozen):
    id: str = Field(min_length=1)
    description: str
    isic_class: str
    unit: Unit
    kgco2e_per_unit: float = Field(gt=0, allow_inf_nan=False)
    features: Optional[FeatureVector] = None


class ProductRecord(_Frozen):
    company: str = Field(min_length=1)
    category: Literal["desktop", "display", "laptop", "phone", "other"]
    name: str = Field(min_length=1)
    features: FeatureVector
    reported_cf_kgco2e: float = Field(gt=0, allow_inf_nan=False)
    reported_uncertainty: Optional[float] = None
    stage_shares: Optional[Dict[str, float]] = None

    @field_validator("stage_shares")
    @classmethod
    def _shares_sum_to_one(cls, shares: Optional[Dict[str, float]]) -> Optional[Dict[str, float]]:
        if shares is None:
            return None
        total = math.fsum(shares.values())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"stage shares sum to {total}, expected 1")
        return shares

    @property
    def id(self) -> str:
        return f"{self.company}/{self.name}"


class GridRecord(_Frozen):
    """Daily (or, with ``date`` unset, annual aggregate) grid carbon intensity"""

    region: str = Field(min_length=1)
    date: Optional[dt.date] = None
    carbon_intensity_g_per_kwh: float = Field(gt=0, allow_inf_nan=False)
    source_shares: FeatureVector

    @field_validator("source_shares")
    @classmethod
    def _check_shares(cls, shares: FeatureVector) -> FeatureVector:
        if shares.names != GRID_SOURCES or any(s.kind != "numeric" for s in shares.specs):
            raise ValueError(f"source_shares must use the numeric schema {list(GRID_SOURCES)}")
        present = [v for v in shares.values.values() if v is not None]
        for name, value in shares.values.items():
            if value is not None and not 0.0 <= float(value) <= 1.0:
                raise ValueError(f"share {name}={value} outside [0, 1]")
        if len(present) == len(GRID_SOURCES):
            total = math.fsum(float(v) for v in present)
            if abs(total - 1.0) > 1e-3:
                raise ValueError(f"source shares sum to {total:.4f}, expected 1")
        return shares


def grid_schema() -> Tuple[FeatureSpec, ...]:
    return make_schema((name, "numeric") for name in GRID_SOURCES)


# domain properties of a raw material (text coordinates are added by the generalizer)
MATERIAL_SCHEMA: Tuple[FeatureSpec, ...] = make_schema([
    ("melting_point_K", "numeric"),
    ("phase_at_stp", "categorical"),
    ("elemental_category", "categorical"),
    ("density_kg_m3", "numeric"),
])


class DocumentFixture(_Frozen):
    """A pre-fetched retrieval document

    Image documents carry the image file path as payload.
    """

    doc_id: str = Field(min_length=1)
    query_keys: Tuple[str, ...] = ()
    modality: Literal["text", "image", "pdf-extract"] = "text"
    payload: str = ""
    metadata: Dict[str, Any] = Field(default_factory=dict)


# ---------------------------------------------------------------------------
# Estimates and breakdowns
# ---------------------------------------------------------------------------

class NeighborRef(_Frozen):
    record_id: str
    distance: float = Field(ge=0, allow_inf_nan=False)
    weight: float = Field(gt=0, allow_inf_nan=False)


class EstimateDistribution(_Frozen):
    mean: float = Field(allow_inf_nan=False)
    std: float = Field(ge=0, allow_inf_nan=False)
    ci95: Tuple[float, float]
    neighbors: Tuple[NeighborRef, ...] = ()
    method_tag: str

    @model_validator(mode="after")
    def _check_interval(self) -> "EstimateDistribution":
        lo, hi = self.ci95
        tol = 1e-9 * max(1.0, abs(self.mean) + self.std)
        if not (lo <= self.mean + tol and self.mean <= hi + tol):
            raise ValueError(f"ci95 {self.ci95} does not bracket mean {self.mean}")
        if abs(lo - (self.mean - CI_Z * self.std)) > tol or abs(hi - (self.mean + CI_Z * self.std)) > tol:
            raise ValueError("ci95 must equal mean ± 1.96·std")
        return self

    @classmethod
    def from_moments(
        cls,
        mean: float,
        std: float,
        neighbors: Sequence[NeighborRef] = (),
        method_tag: str = "knn-weighted-gaussian",
    ) -> "EstimateDistribution":
        return cls(
            mean=mean,
            std=std,
            ci95=(mean - CI_Z * std, mean + CI_Z * std),
            neighbors=tuple(neighbors),
            method_tag=method_tag,
        )

    def contains(self, value: float) -> bool:
        return self.ci95[0] <= value <= self.ci95[1]


class EntryContribution(_Frozen):
    entry_index: int = Field(ge=0)
    ef_id: str
    contribution_kgco2e: float = Field(ge=0, allow_inf_nan=False)
    similarity: Optional[float] = None
    estimate: Optional[EstimateDistribution] = None


def _close(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


class CFBreakdown(_Frozen):
    total_kgco2e: float = Field(ge=0, allow_inf_nan=False)
    total_std_kgco2e: float = Field(0.0, ge=0, allow_inf_nan=False)
    per_entry: Tuple[EntryContribution, ...] = ()
    per_class: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_totals(self) -> "CFBreakdown":
        by_entry = math.fsum(c.contribution_kgco2e for c in self.per_entry)
        by_class = math.fsum(self.per_class.values())
        if not _close(self.total_kgco2e, by_entry) or not _close(self.total_kgco2e, by_class):
            raise ValueError(
                f"inconsistent breakdown: total={self.total_kgco2e}, "
                f"per_entry={by_entry}, per_class={by_class}"
            )
        return self


__all__ = [
    "MISSING",
    "UNITS",
    "CATEGORIES",
    "GRID_SOURCES",
    "MODALITIES",
    "CI_Z",
    "GENERATED",
    "FeatureSpec",
    "FeatureVector",
    "make_schema",
    "completeness",
    "DataAbstraction",
    "InventoryEntry",
    "LifeCycleInventory",
    "InventoryViolation",
    "validate_inventory",
    "EmissionFactor",
    "ProductRecord",
    "GridRecord",
    "grid_schema",
    "MATERIAL_SCHEMA",
    "DocumentFixture",
    "NeighborRef",
    "EstimateDistribution",
    "EntryContribution",
    "CFBreakdown",
]
