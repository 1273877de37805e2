"""
Agent scaling experiments.

``make_agent_suite`` builds products whose documents are truthful and
chained: a class document names the first part of each attributed class,
and the document answering a part's attribute also names the next part.
Budgets therefore truncate one fixed discovery sequence, so more rounds,
more time or more documents can only add correct entries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.embeddings import EmbeddingProvider, HashingEmbedder
from ..core.errors import DataValidationError
from ..core.evaluation import ape, lci_f1, lci_jsd, lci_l1
from ..core.ingestion import Corpus
from ..core.lcia import EmissionFactorDB, assess
from ..core.models import DocumentFixture, EmissionFactor, InventoryEntry, LifeCycleInventory
from ..core.reports import Report, Row
from ..core.runner import run_parallel
from .abstraction import REQUIRED_ATTRIBUTES, build_data_abstraction
from .backends import FixtureBackend
from .orchestrator import Budget, SimulatedClock, run_selfplay

logger = logging.getLogger(__name__)

DIMENSIONS: Dict[str, str] = {
    'rounds': 'max_rounds',
    'thinking_ms': 'max_thinking_ms',
    'documents': 'max_documents',
}
DEFAULT_GRIDS: Dict[str, Tuple[int, ...]] = {
    'rounds': (1, 2, 4, 8),
    'thinking_ms': (5_000, 10_000, 20_000, 40_000, 80_000),
    'documents': (4, 8, 16, 32),
}
OPEN_BUDGET = Budget(max_thinking_ms=10**9, max_rounds=64, max_documents=10**6)

# (description, unit, quantity range, kgCO2e per unit, ISIC class)
_CATALOG: Dict[str, Tuple[Tuple[str, str, Tuple[float, float], float, str], ...]] = {
    'PCB': (
        ("main logic board", "mm2", (3000, 9000), 0.0011, "2610"),
        ("secondary io board", "mm2", (800, 2500), 0.0009, "2610"),
        ("flex interconnect board", "mm2", (300, 1200), 0.0007, "2610"),
    ),
    'IC': (
        ("application processor", "count", (1, 1), 3.8, "2610"),
        ("dram memory package", "count", (1, 4), 1.9, "2610"),
        ("nand flash storage", "count", (1, 2), 2.6, "2610"),
        ("power management controller", "count", (1, 3), 0.6, "2610"),
        ("rf transceiver", "count", (1, 2), 0.9, "2610"),
        ("audio codec chip", "count", (1, 1), 0.3, "2610"),
        ("wireless connectivity module", "count", (1, 1), 0.8, "2610"),
    ),
    'sensor': (
        ("camera image sensor", "count", (1, 4), 0.7, "2651"),
        ("accelerometer", "count", (1, 1), 0.15, "2651"),
        ("ambient light sensor", "count", (1, 1), 0.05, "2651"),
        ("fingerprint reader", "count", (1, 1), 0.4, "2651"),
    ),
    'passive': (
        ("ceramic capacitor", "count", (40, 400), 0.002, "2610"),
        ("chip resistor", "count", (30, 300), 0.001, "2610"),
        ("power inductor", "count", (5, 40), 0.012, "2610"),
        ("quartz crystal oscillator", "count", (1, 3), 0.05, "2610"),
    ),
    'mechanical': (
        ("aluminium enclosure", "gram", (20, 250), 0.028, "2599"),
        ("steel screws", "gram", (2, 12), 0.004, "2599"),
        ("shield can", "gram", (2, 10), 0.005, "2599"),
        ("cover glass", "gram", (10, 60), 0.0012, "2310"),
    ),
    'battery': (
        ("lithium ion battery pack", "gram", (40, 350), 0.012, "2720"),
    ),
    'display': (
        ("oled display panel", "mm2", (6000, 40000), 0.0018, "2610"),
        ("lcd display panel", "mm2", (6000, 60000), 0.0011, "2610"),
    ),
}
_PART_COUNTS: Dict[str, Tuple[int, int]] = {
    'PCB': (1, 2), 'IC': (2, 5), 'sensor': (1, 3), 'passive': (1, 3),
    'mechanical': (1, 3), 'battery': (1, 1), 'display': (1, 1),
}
_ATTRIBUTE_VALUES: Dict[str, Tuple[Any, ...]] = {
    'layers': (6.0, 8.0, 10.0, 12.0),
    'technology_node': (3.0, 5.0, 7.0, 14.0, 28.0),
    'capacity_wh': (12.5, 15.1, 17.3, 45.0, 56.0, 72.0),
}


def suite_emission_factors() -> List[EmissionFactor]:
    """One factor per catalog part, ids ``suite-<class>-<n>``"""
    return [
        EmissionFactor(id=f"suite-{cls.lower()}-{i:02d}", description=desc, isic_class=isic,
                       unit=unit, kgco2e_per_unit=ef)
        for cls, parts in _CATALOG.items()
        for i, (desc, unit, _, ef, isic) in enumerate(parts)
    ]


@dataclass(frozen=True)
class AgentCase:
    query: str
    corpus: Corpus
    reference: LifeCycleInventory
    reference_cf: float


@dataclass(frozen=True)
class AgentSuite:
    cases: Tuple[AgentCase, ...]
    factors: Tuple[EmissionFactor, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.cases)


def _entry_line(entry: InventoryEntry, omit: Sequence[str] = ()) -> str:
    attrs = "; ".join(f"{k}={v}" for k, v in entry.attributes.items() if k not in omit)
    return f"ENTRY | {entry.component_class} | {entry.description} | {entry.quantity:g} | {entry.unit} | {attrs}"


def _case_entries(component_class: str, rng: np.random.Generator) -> List[InventoryEntry]:
    parts = _CATALOG[component_class]
    lo, hi = _PART_COUNTS[component_class]
    n = min(int(rng.integers(lo, hi + 1)), len(parts))
    chosen = sorted(rng.choice(len(parts), size=n, replace=False))
    entries = []
    for idx in chosen:
        desc, unit, (q_lo, q_hi), _, _ = parts[idx]
        if unit == "count":
            quantity = float(rng.integers(int(q_lo), int(q_hi) + 1))
        else:
            quantity = float(round(rng.uniform(q_lo, q_hi), 1))
        attrs: Dict[str, Any] = {}
        for attr in REQUIRED_ATTRIBUTES.get(component_class, ()):
            if attr == "display_type":
                attrs[attr] = desc.split()[0]
            else:
                attrs[attr] = float(rng.choice(_ATTRIBUTE_VALUES[attr]))
        entries.append(InventoryEntry(component_class=component_class, description=desc,
                                      quantity=quantity, unit=unit, attributes=attrs))
    return entries


def _case_documents(product: str, component_class: str,
                    entries: Sequence[InventoryEntry]) -> List[DocumentFixture]:
    slug = component_class.lower()
    required = REQUIRED_ATTRIBUTES.get(component_class, ())
    if not required:
        lines = [f"{product} {component_class} teardown notes."] + [_entry_line(e) for e in entries]
        return [DocumentFixture(doc_id=f"{slug}-class", query_keys=(f"{product} {component_class}".lower(),),
                                payload="\n".join(lines))]

    attr = required[0]
    docs = [DocumentFixture(
        doc_id=f"{slug}-class",
        query_keys=(f"{product} {component_class}".lower(),),
        payload="\n".join([f"{product} {component_class} overview.", _entry_line(entries[0], omit=required)]),
    )]
    for j, entry in enumerate(entries):
        lines = [f"{product} {entry.description} datasheet.",
                 f"ATTR | {component_class} | {entry.description} | {attr} | {entry.attributes[attr]}"]
        if j + 1 < len(entries):
            lines.append(_entry_line(entries[j + 1], omit=required))
        docs.append(DocumentFixture(
            doc_id=f"{slug}-{j + 1:02d}",
            query_keys=(f"{product} {component_class} {entry.description} {attr}".lower(),),
            payload="\n".join(lines),
        ))
    return docs


def make_agent_suite(n: int = 20, seed: int = 0,
                     provider: Optional[EmbeddingProvider] = None) -> AgentSuite:
    """Seeded phone and laptop products with reference LCIs and chained corpora"""
    if n < 1:
        raise DataValidationError(f"suite size must be positive, got {n}")
    rng = np.random.default_rng(seed)
    factors = suite_emission_factors()
    db = EmissionFactorDB(factors, provider or HashingEmbedder())
    cases = []
    for i in range(n):
        product = f"Demo {'Phone' if i % 2 == 0 else 'Laptop'} {i:02d}"
        da = build_data_abstraction(product)
        entries: List[InventoryEntry] = []
        docs: List[DocumentFixture] = []
        for cls_name in da.component_classes:
            class_entries = _case_entries(cls_name, rng)
            entries.extend(class_entries)
            docs.extend(_case_documents(product, cls_name, class_entries))
        reference = LifeCycleInventory(product=product, da=da, entries=tuple(entries),
                                       provenance=("reference",) * len(entries))
        cases.append(AgentCase(
            query=product,
            corpus=Corpus.from_documents(docs),
            reference=reference,
            reference_cf=assess(reference, db).total_kgco2e,
        ))
    return AgentSuite(cases=tuple(cases), factors=tuple(factors), seed=seed)


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------


class CaseResult(Row):
    query: str
    status: str
    ape: float
    l1: float
    f1: float
    jsd: float
    tokens_used: int
    documents_read: int
    reasoning_steps: int
    elapsed_ms: float


class ScalingPoint(Row):
    dimension: str
    value: float
    max_thinking_ms: int
    max_rounds: int
    max_documents: int
    n_cases: int
    ape_mean: float
    ape_sd: float
    l1_mean: float
    l1_sd: float
    f1_mean: float
    f1_sd: float
    jsd_mean: float
    jsd_sd: float
    tokens_mean: float
    tokens_sd: float
    documents_mean: float
    documents_sd: float
    steps_mean: float
    steps_sd: float
    converged: int
    cases: Tuple[CaseResult, ...] = ()


class ScalingReport(Report):
    dimension: str
    points: Tuple[ScalingPoint, ...]

    def rows(self) -> List[Dict[str, Any]]:
        return [p.model_dump(exclude={'cases'}) for p in self.points]

    def series(self, field: str) -> List[float]:
        return [float(getattr(p, field)) for p in self.points]


def _mean_sd(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def _run_case(case: AgentCase, budget: Budget, db: EmissionFactorDB,
              latency: Mapping[str, float], docs_per_query: int) -> CaseResult:
    lci, transcript = run_selfplay(
        case.query, budget, FixtureBackend(case.corpus),
        clock=SimulatedClock(**latency), docs_per_query=docs_per_query,
    )
    try:
        divergence = lci_jsd(lci, case.reference)
    except DataValidationError:
        divergence = 1.0
    total = assess(lci, db).total_kgco2e
    return CaseResult(
        query=case.query, status=transcript.status,
        ape=float(ape([total], [case.reference_cf])[0]),
        l1=lci_l1(lci, case.reference), f1=lci_f1(lci, case.reference), jsd=divergence,
        tokens_used=transcript.tokens_used, documents_read=transcript.documents_read,
        reasoning_steps=transcript.reasoning_steps, elapsed_ms=transcript.elapsed_ms,
    )


def measure_scaling(suite: AgentSuite, budgets: Sequence[Budget], *, dimension: str = "custom",
                    values: Optional[Sequence[float]] = None, docs_per_query: int = 1,
                    latency: Optional[Mapping[str, float]] = None, max_workers: int = 1,
                    provider: Optional[EmbeddingProvider] = None) -> ScalingReport:
    """Run every suite case under every budget and aggregate the LCI and CO2e metrics"""
    if values is not None and len(values) != len(budgets):
        raise DataValidationError(f"{len(values)} values for {len(budgets)} budgets")
    db = EmissionFactorDB(suite.factors, provider or HashingEmbedder())
    latency = dict(latency or {})
    jobs = [(b, c) for b in range(len(budgets)) for c in range(len(suite.cases))]
    results = run_parallel(
        lambda job: _run_case(suite.cases[job[1]], budgets[job[0]], db, latency, docs_per_query),
        jobs, max_workers,
    )

    points = []
    n = len(suite.cases)
    for b, budget in enumerate(budgets):
        rows = results[b * n:(b + 1) * n]
        ape_m, ape_s = _mean_sd([r.ape for r in rows])
        l1_m, l1_s = _mean_sd([r.l1 for r in rows])
        f1_m, f1_s = _mean_sd([r.f1 for r in rows])
        jsd_m, jsd_s = _mean_sd([r.jsd for r in rows])
        tok_m, tok_s = _mean_sd([r.tokens_used for r in rows])
        doc_m, doc_s = _mean_sd([r.documents_read for r in rows])
        step_m, step_s = _mean_sd([r.reasoning_steps for r in rows])
        points.append(ScalingPoint(
            dimension=dimension, value=float(values[b]) if values is not None else float(b),
            max_thinking_ms=budget.max_thinking_ms, max_rounds=budget.max_rounds,
            max_documents=budget.max_documents, n_cases=n,
            ape_mean=ape_m, ape_sd=ape_s, l1_mean=l1_m, l1_sd=l1_s,
            f1_mean=f1_m, f1_sd=f1_s, jsd_mean=jsd_m, jsd_sd=jsd_s,
            tokens_mean=tok_m, tokens_sd=tok_s, documents_mean=doc_m, documents_sd=doc_s,
            steps_mean=step_m, steps_sd=step_s,
            converged=sum(r.status == "converged" for r in rows),
            cases=tuple(rows),
        ))
        logger.info("%s=%s: F1 %.3f, APE %.2f%%, %.1f docs, %.1f rounds", dimension,
                    points[-1].value, f1_m, ape_m, points[-1].documents_mean, points[-1].steps_mean)
    return ScalingReport(dimension=dimension, points=tuple(points))


def budget_grid(dimension: str, values: Optional[Sequence[int]] = None,
                base: Budget = OPEN_BUDGET) -> List[Budget]:
    """Budgets that vary one dimension and leave the others at ``base``"""
    if dimension not in DIMENSIONS:
        raise DataValidationError(f"unknown budget dimension {dimension!r}; expected one of {list(DIMENSIONS)}")
    values = values or DEFAULT_GRIDS[dimension]
    return [base.model_copy(update={DIMENSIONS[dimension]: int(v)}) for v in values]


def sweep_budget(suite: AgentSuite, dimension: str, values: Optional[Sequence[int]] = None, *,
                 base: Budget = OPEN_BUDGET, **kwargs: Any) -> ScalingReport:
    values = list(values or DEFAULT_GRIDS.get(dimension, ()))
    return measure_scaling(suite, budget_grid(dimension, values, base), dimension=dimension,
                           values=values, **kwargs)


__all__ = [
    "DIMENSIONS",
    "DEFAULT_GRIDS",
    "OPEN_BUDGET",
    "suite_emission_factors",
    "AgentCase",
    "AgentSuite",
    "make_agent_suite",
    "CaseResult",
    "ScalingPoint",
    "ScalingReport",
    "measure_scaling",
    "budget_grid",
    "sweep_budget",
]
