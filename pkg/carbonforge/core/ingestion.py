"""
Ingestion: PCF disclosures, daily grid data, emission-factor databases and
document corpora into core types.

Bad rows never abort a batch; they come back as ``RowReport`` entries with
their 1-based data row (or file line) number.
"""
from __future__ import annotations

import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Dict, Generic, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import orjson
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import DataValidationError
from .models import (
    GRID_SOURCES,
    DocumentFixture,
    EmissionFactor,
    FeatureSpec,
    FeatureVector,
    GridRecord,
    ProductRecord,
    grid_schema,
    make_schema,
)
from .serialization import dumps_line, read_json

logger = logging.getLogger(__name__)

T = TypeVar('T')
Source = Union[str, Path, IO[str]]

PRODUCT_SCHEMA: Tuple[FeatureSpec, ...] = make_schema([
    ("cpu_node_nm", "numeric"),
    ("memory_gb", "numeric"),
    ("storage_gb", "numeric"),
    ("display_in", "numeric"),
    ("battery_wh", "numeric"),
    ("weight_kg", "numeric"),
    ("gpu", "categorical"),
    ("panel", "categorical"),
])

STAGES: Tuple[str, ...] = ("manufacturing", "transport", "use", "eol")
PCF_COLUMNS: Tuple[str, ...] = (
    "company", "category", "name", "reported_cf_kgco2e", "reported_uncertainty",
) + tuple(f"stage_{s}" for s in STAGES)
GRID_COLUMNS: Tuple[str, ...] = ("region", "date", "carbon_intensity_g_per_kwh")


class RowReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    row: int
    reason: str


@dataclass
class ParseResult(Generic[T]):
    records: List[T] = field(default_factory=list)
    rejected: List[RowReport] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'records': self.records,
            'rejected': [r.model_dump() for r in self.rejected],
        }


def _reason(exc: Exception) -> str:
    if isinstance(exc, ValidationError):
        parts = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err.get('loc', ()))
            parts.append(f"{loc}: {err['msg']}" if loc else err['msg'])
        return "; ".join(parts)
    return str(exc)


def _read_table(source: Source) -> pd.DataFrame:
    try:
        return pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataValidationError(f"cannot read table: {exc}") from exc


def _require_header(df: pd.DataFrame, columns: Iterable[str]) -> None:
    """The header must list exactly ``columns``, in order"""
    expected = list(columns)
    actual = [str(c) for c in df.columns]
    present = set(actual)
    for column in expected:
        if column not in present:
            raise DataValidationError(f"missing column {column!r}", details={'column': column})
    extra = [c for c in actual if c not in set(expected)]
    if extra:
        raise DataValidationError(f"unexpected column(s) {extra}", details={'columns': extra})
    if actual != expected:
        raise DataValidationError(
            "columns out of order", details={'expected': expected, 'actual': actual},
        )


def _cell(row: Mapping[str, Any], column: str) -> Optional[str]:
    value = row.get(column)
    if not isinstance(value, str):
        return None
    value = value.strip()
    return value or None


def _number(row: Mapping[str, Any], column: str) -> Optional[float]:
    text = _cell(row, column)
    if text is None:
        return None
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{column}: not a number ({text!r})") from None
    if not math.isfinite(value):
        raise ValueError(f"{column}: not finite ({text!r})")
    return value


def _features(row: Mapping[str, Any], schema: Sequence[FeatureSpec]) -> FeatureVector:
    values: Dict[str, Any] = {}
    for spec in schema:
        values[spec.name] = _number(row, spec.name) if spec.kind == "numeric" else _cell(row, spec.name)
    return FeatureVector(schema=tuple(schema), values=values)


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# PCF disclosures
# ---------------------------------------------------------------------------

def _pcf_row(row: Mapping[str, Any], schema: Sequence[FeatureSpec]) -> ProductRecord:
    cf = _number(row, "reported_cf_kgco2e")
    if cf is None:
        raise ValueError("reported_cf_kgco2e: empty")
    shares = {stage: _number(row, f"stage_{stage}") for stage in STAGES}
    present_shares = {k: v for k, v in shares.items() if v is not None}
    return ProductRecord(
        company=_cell(row, "company") or "",
        category=_cell(row, "category") or "",
        name=_cell(row, "name") or "",
        features=_features(row, schema),
        reported_cf_kgco2e=cf,
        reported_uncertainty=_number(row, "reported_uncertainty"),
        stage_shares=present_shares or None,
    )


def parse_pcf_records(source: Source, schema: Sequence[FeatureSpec] = PRODUCT_SCHEMA) -> ParseResult[ProductRecord]:
    """One ProductRecord per valid row; every other row is reported"""
    df = _read_table(source)
    _require_header(df, PCF_COLUMNS + tuple(s.name for s in schema))

    result: ParseResult[ProductRecord] = ParseResult()
    for i, row in enumerate(df.to_dict("records"), start=1):
        try:
            result.records.append(_pcf_row(row, schema))
        except ValueError as exc:
            report = RowReport(row=i, reason=_reason(exc))
            logger.warning("pcf row %d rejected: %s", report.row, report.reason)
            result.rejected.append(report)
    logger.info("parsed %d pcf records (%d rejected)", len(result.records), len(result.rejected))
    return result


def write_pcf_csv(records: Sequence[ProductRecord], path: Union[str, Path],
                  schema: Sequence[FeatureSpec] = PRODUCT_SCHEMA) -> Path:
    rows = []
    for r in records:
        shares = r.stage_shares or {}
        row = {
            'company': r.company,
            'category': r.category,
            'name': r.name,
            'reported_cf_kgco2e': _format(r.reported_cf_kgco2e),
            'reported_uncertainty': _format(r.reported_uncertainty),
        }
        row.update({f"stage_{s}": _format(shares.get(s)) for s in STAGES})
        row.update({spec.name: _format(r.features.get(spec.name)) for spec in schema})
        rows.append(row)
    columns = list(PCF_COLUMNS) + [s.name for s in schema]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    return path


def dedup_similar(records: Sequence[ProductRecord]) -> Tuple[List[ProductRecord], List[ProductRecord]]:
    """Collapse records with identical present features onto the smallest name"""
    categories = {r.category for r in records}
    if len(categories) > 1:
        raise DataValidationError(f"dedup expects one category, got {sorted(categories)}")

    groups: Dict[Tuple[Tuple[str, Any], ...], List[ProductRecord]] = defaultdict(list)
    for r in records:
        groups[tuple(r.features.values.items())].append(r)

    representatives = {key: min(members, key=lambda r: r.name) for key, members in groups.items()}
    kept: List[ProductRecord] = []
    excluded: List[ProductRecord] = []
    for r in records:
        rep = representatives[tuple(r.features.values.items())]
        (kept if r is rep else excluded).append(r)
    if excluded:
        logger.info("dedup excluded %d similar models", len(excluded))
    return kept, excluded


def records_by_category(records: Iterable[ProductRecord]) -> Dict[str, List[ProductRecord]]:
    grouped: Dict[str, List[ProductRecord]] = defaultdict(list)
    for r in records:
        grouped[r.category].append(r)
    return dict(grouped)


# ---------------------------------------------------------------------------
# Grid carbon intensity
# ---------------------------------------------------------------------------

def _grid_row(row: Mapping[str, Any]) -> GridRecord:
    date_text = _cell(row, "date")
    if date_text is None:
        raise ValueError("date: empty")
    try:
        day = dt.date.fromisoformat(date_text)
    except ValueError:
        raise ValueError(f"date: not an ISO-8601 day ({date_text!r})") from None
    ci = _number(row, "carbon_intensity_g_per_kwh")
    if ci is None:
        raise ValueError("carbon_intensity_g_per_kwh: empty")
    return GridRecord(
        region=_cell(row, "region") or "",
        date=day,
        carbon_intensity_g_per_kwh=ci,
        source_shares=_features(row, grid_schema()),
    )


def parse_grid_records(source: Source) -> ParseResult[GridRecord]:
    df = _read_table(source)
    _require_header(df, GRID_COLUMNS + GRID_SOURCES)

    result: ParseResult[GridRecord] = ParseResult()
    for i, row in enumerate(df.to_dict("records"), start=1):
        try:
            result.records.append(_grid_row(row))
        except ValueError as exc:
            report = RowReport(row=i, reason=_reason(exc))
            logger.warning("grid row %d rejected: %s", report.row, report.reason)
            result.rejected.append(report)
    logger.info("parsed %d grid records (%d rejected)", len(result.records), len(result.rejected))
    return result


def write_grid_csv(records: Sequence[GridRecord], path: Union[str, Path]) -> Path:
    rows = []
    for r in records:
        row = {
            'region': r.region,
            'date': r.date.isoformat() if r.date else "",
            'carbon_intensity_g_per_kwh': _format(r.carbon_intensity_g_per_kwh),
        }
        row.update({s: _format(r.source_shares.get(s)) for s in GRID_SOURCES})
        rows.append(row)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=list(GRID_COLUMNS + GRID_SOURCES)).to_csv(path, index=False)
    return path


def _group_by_region(records: Union[Sequence[GridRecord], Mapping[str, Sequence[GridRecord]]]
                     ) -> Dict[str, List[GridRecord]]:
    if isinstance(records, Mapping):
        return {region: list(group) for region, group in records.items()}
    grouped: Dict[str, List[GridRecord]] = defaultdict(list)
    for r in records:
        grouped[r.region].append(r)
    return dict(grouped)


def annual_mean_intensity(records: Union[Sequence[GridRecord], Mapping[str, Sequence[GridRecord]]]
                          ) -> Dict[str, float]:
    """Arithmetic mean of the daily intensities of each region"""
    means: Dict[str, float] = {}
    for region, group in sorted(_group_by_region(records).items()):
        if not group:
            raise DataValidationError(f"region {region!r} has no daily records")
        means[region] = math.fsum(r.carbon_intensity_g_per_kwh for r in group) / len(group)
    return means


def aggregate_regions(records: Union[Sequence[GridRecord], Mapping[str, Sequence[GridRecord]]]
                      ) -> List[GridRecord]:
    """One undated record per region: annual mean intensity and mean present shares"""
    means = annual_mean_intensity(records)
    out: List[GridRecord] = []
    for region, group in sorted(_group_by_region(records).items()):
        shares: Dict[str, Optional[float]] = {}
        for source in GRID_SOURCES:
            present = [float(r.source_shares.values[source]) for r in group
                       if r.source_shares.values[source] is not None]
            shares[source] = math.fsum(present) / len(present) if present else None
        if all(v is not None for v in shares.values()):
            total = math.fsum(shares.values())  # type: ignore[arg-type]
            if total > 0:
                shares = {k: v / total for k, v in shares.items()}  # type: ignore[operator]
        out.append(GridRecord(
            region=region,
            carbon_intensity_g_per_kwh=means[region],
            source_shares=FeatureVector(schema=grid_schema(), values=shares),
        ))
    return out


# ---------------------------------------------------------------------------
# Emission-factor databases
# ---------------------------------------------------------------------------

def load_efdb(path: Union[str, Path]) -> ParseResult[EmissionFactor]:
    """JSON lines of EmissionFactor objects; bad lines reported by line number"""
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"emission factor database not found: {path}")
    result: ParseResult[EmissionFactor] = ParseResult()
    seen: set = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            ef = EmissionFactor.model_validate(orjson.loads(line))
            if ef.id in seen:
                raise ValueError(f"duplicate emission factor id {ef.id!r}")
            seen.add(ef.id)
            result.records.append(ef)
        except (orjson.JSONDecodeError, ValueError) as exc:
            report = RowReport(row=lineno, reason=_reason(exc))
            logger.warning("efdb line %d rejected: %s", lineno, report.reason)
            result.rejected.append(report)
    return result


def dump_efdb(factors: Iterable[EmissionFactor], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(dumps_line(ef) + b"\n" for ef in factors))
    return path


# ---------------------------------------------------------------------------
# Document corpora
# ---------------------------------------------------------------------------

@dataclass
class Corpus:
    """DocumentFixtures by id plus the query-key index"""

    docs: Dict[str, DocumentFixture]
    index: Dict[str, List[str]]
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.docs)

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self.docs

    def get(self, doc_id: str) -> DocumentFixture:
        try:
            return self.docs[doc_id]
        except KeyError:
            raise DataValidationError(f"unknown document {doc_id!r}") from None

    @classmethod
    def from_documents(cls, docs: Iterable[DocumentFixture], root: Optional[Path] = None) -> "Corpus":
        by_id: Dict[str, DocumentFixture] = {}
        for doc in docs:
            if doc.doc_id in by_id:
                raise DataValidationError(f"duplicate doc_id {doc.doc_id!r} in corpus")
            by_id[doc.doc_id] = doc
        return cls(docs=by_id, index=build_query_index(by_id.values()), root=root)


def build_query_index(docs: Iterable[DocumentFixture]) -> Dict[str, List[str]]:
    index: Dict[str, List[str]] = defaultdict(list)
    for doc in docs:
        for key in doc.query_keys:
            index[key.lower()].append(doc.doc_id)
    return {key: sorted(ids) for key, ids in sorted(index.items())}


def load_corpus(directory: Union[str, Path]) -> Corpus:
    """Read every ``*.json`` DocumentFixture in ``directory`` plus ``index.json``

    Image payloads are file names relative to the corpus directory and are
    resolved to absolute paths.
    """
    root = Path(directory)
    if not root.is_dir():
        raise DataValidationError(f"corpus directory not found: {root}")

    docs: List[DocumentFixture] = []
    for path in sorted(root.glob("*.json")):
        if path.name == "index.json":
            continue
        try:
            doc = DocumentFixture.model_validate(read_json(path))
        except (orjson.JSONDecodeError, ValidationError) as exc:
            raise DataValidationError(f"invalid document {path.name}: {_reason(exc)}") from exc
        if doc.modality == "image" and doc.payload and not Path(doc.payload).is_absolute():
            doc = doc.model_copy(update={'payload': str((root / doc.payload).resolve())})
        docs.append(doc)

    corpus = Corpus.from_documents(docs, root=root)
    index_path = root / "index.json"
    if index_path.exists():
        raw = read_json(index_path)
        index = {str(k).lower(): sorted(v) for k, v in raw.items()}
        unknown = sorted({d for ids in index.values() for d in ids if d not in corpus.docs})
        if unknown:
            raise DataValidationError(f"index.json references unknown documents: {unknown}")
        corpus.index = dict(sorted(index.items()))
    logger.debug("loaded corpus %s: %d documents, %d keys", root, len(corpus), len(corpus.index))
    return corpus


__all__ = [
    "PRODUCT_SCHEMA",
    "STAGES",
    "PCF_COLUMNS",
    "GRID_COLUMNS",
    "RowReport",
    "ParseResult",
    "parse_pcf_records",
    "write_pcf_csv",
    "dedup_similar",
    "records_by_category",
    "parse_grid_records",
    "write_grid_csv",
    "annual_mean_intensity",
    "aggregate_regions",
    "load_efdb",
    "dump_efdb",
    "Corpus",
    "build_query_index",
    "load_corpus",
]
