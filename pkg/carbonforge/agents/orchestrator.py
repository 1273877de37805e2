"""
Two-role self-play.

Each round the critic audits the LCI against its data abstraction and
issues targeted queries; the retriever answers each query from the
backend and the LCI absorbs the resulting assertions. The loop stops when
the critique comes back empty or a budget runs out. Budgets are checked
between rounds, except documents which are capped at read time.
"""
from __future__ import annotations

import logging
import math
import time
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.errors import BackendError, DataValidationError
from ..core.ingestion import Corpus
from ..core.models import (
    UNITS,
    DataAbstraction,
    DocumentFixture,
    InventoryEntry,
    LifeCycleInventory,
)
from ..core.vision import BlobDetector, ComponentDetector, inventory_from_image
from .abstraction import build_data_abstraction
from .backends import Assertion, AttributeValue, CriticQuery, QueryBackend

logger = logging.getLogger(__name__)

TRANSCRIPT_SCHEMA_VERSION = 1
Status = Literal["converged", "budget_exhausted", "backend_error"]


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Budget(_Frozen):
    max_thinking_ms: int = Field(gt=0)
    max_rounds: int = Field(gt=0)
    max_documents: int = Field(gt=0)


# ---------------------------------------------------------------------------
# Clocks
# ---------------------------------------------------------------------------


class Clock(ABC):
    @abstractmethod
    def now_ms(self) -> float:
        ...

    def charge(self, action: str) -> None:
        """Account for one critique, search or read"""


class SimulatedClock(Clock):
    """Deterministic latency model for fixture runs"""

    def __init__(self, critique_ms: float = 100, search_ms: float = 300, read_ms: float = 2000):
        self.costs = {'critique': critique_ms, 'search': search_ms, 'read': read_ms}
        self._now = 0.0

    def now_ms(self) -> float:
        return self._now

    def charge(self, action: str) -> None:
        self._now += self.costs[action]


class WallClock(Clock):
    def __init__(self) -> None:
        self._start = time.perf_counter()

    def now_ms(self) -> float:
        return (time.perf_counter() - self._start) * 1000.0


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------


class Retrieval(_Frozen):
    """Documents read for one query, in reading order"""

    query: CriticQuery
    doc_ids: Tuple[str, ...]


class FilledAttribute(_Frozen):
    entry_index: int
    attribute: str
    value: AttributeValue
    source: str


class RoundRecord(_Frozen):
    index: int
    started_ms: float
    ended_ms: float
    queries: Tuple[CriticQuery, ...]
    retrievals: Tuple[Retrieval, ...] = ()
    entries_added: Tuple[InventoryEntry, ...] = ()
    attributes_filled: Tuple[FilledAttribute, ...] = ()

    @property
    def doc_ids(self) -> Tuple[str, ...]:
        return tuple(d for r in self.retrievals for d in r.doc_ids)


class AgentTranscript(_Frozen):
    schema_version: int = TRANSCRIPT_SCHEMA_VERSION
    product: str
    da: DataAbstraction
    budget: Budget
    rounds: Tuple[RoundRecord, ...] = ()
    elapsed_ms: float = 0.0
    grace_ms: float = 0.0
    documents_read: int = 0
    reasoning_steps: int = 0
    tokens_used: int = 0
    status: Status = "converged"
    error: Optional[str] = None

    @model_validator(mode="after")
    def _check_accounting(self) -> "AgentTranscript":
        if self.reasoning_steps != len(self.rounds):
            raise ValueError(f"reasoning_steps={self.reasoning_steps} but {len(self.rounds)} rounds recorded")
        read = {d for r in self.rounds for d in r.doc_ids}
        if self.documents_read != len(read):
            raise ValueError(f"documents_read={self.documents_read} but {len(read)} distinct documents recorded")
        last = 0.0
        for r in self.rounds:
            if r.started_ms < last or r.ended_ms < r.started_ms:
                raise ValueError(f"round {r.index} timestamps go backwards")
            last = r.ended_ms
        return self


# ---------------------------------------------------------------------------
# Critic
# ---------------------------------------------------------------------------


def critique(lci: LifeCycleInventory, da: Optional[DataAbstraction] = None) -> List[CriticQuery]:
    """Targeted queries for the gaps in ``lci``; empty means converged

    One query per DA class without entries, then one per required attribute
    missing on an existing entry, in DA and entry order.
    """
    da = da or lci.da
    product = lci.product
    queries: List[CriticQuery] = []
    for cls_name in da.component_classes:
        if not lci.entries_of(cls_name):
            queries.append(CriticQuery(kind="class", component_class=cls_name, text=f"{product} {cls_name}"))
    for entry in lci.entries:
        for attr in da.required_for(entry.component_class):
            if entry.attribute_missing(attr):
                queries.append(CriticQuery(
                    kind="attribute", component_class=entry.component_class, attribute=attr,
                    entry_description=entry.description,
                    text=f"{product} {entry.component_class} {entry.description} {attr}",
                ))
    return queries


# ---------------------------------------------------------------------------
# LCI updates
# ---------------------------------------------------------------------------


def _image_assertions(doc: DocumentFixture, detector: ComponentDetector) -> List[Assertion]:
    try:
        entries = inventory_from_image(doc, detector)
    except DataValidationError as exc:
        logger.warning("skipping image %s: %s", doc.doc_id, exc)
        return []
    return [
        Assertion(kind="entry", component_class=e.component_class, description=e.description,
                  source=doc.doc_id, quantity=e.quantity, unit=e.unit, attributes=e.attributes)
        for e in entries
    ]


def document_assertions(doc: DocumentFixture, query: CriticQuery, backend: QueryBackend,
                        detector: ComponentDetector) -> Tuple[List[Assertion], int]:
    """Assertions and token charge for one document"""
    if doc.modality == "image":
        return _image_assertions(doc, detector), 0
    answer = backend.answer(query, [doc])
    return list(answer.assertions), answer.tokens


def apply_assertions(
    lci: LifeCycleInventory, assertions: Sequence[Assertion],
) -> Tuple[LifeCycleInventory, List[InventoryEntry], List[FilledAttribute]]:
    """Merge assertions into ``lci``

    Entries are keyed by (class, description); a repeated entry only fills
    attributes that are still missing. Assertions outside the DA, with an
    unknown unit or an invalid quantity are dropped.
    """
    allowed = set(lci.da.component_classes)
    entries = list(lci.entries)
    provenance = list(lci.provenance)
    keys: Dict[Tuple[str, str], int] = {(e.component_class, e.description): i for i, e in enumerate(entries)}
    added: List[InventoryEntry] = []
    filled: List[FilledAttribute] = []

    def _fill(i: int, attr: str, value: AttributeValue, source: str) -> None:
        if value is None or not entries[i].attribute_missing(attr):
            return
        entries[i] = entries[i].model_copy(update={'attributes': {**entries[i].attributes, attr: value}})
        filled.append(FilledAttribute(entry_index=i, attribute=attr, value=value, source=source))

    for a in assertions:
        if a.component_class not in allowed:
            logger.warning("dropping assertion from %s: class %r is outside the %s abstraction",
                           a.source, a.component_class, lci.da.product_class)
            continue
        if a.kind == "attribute":
            if a.attribute is None:
                continue
            targets = [
                i for i, e in enumerate(entries)
                if e.component_class == a.component_class and a.description in ("*", e.description)
            ]
            for i in targets:
                _fill(i, a.attribute, a.value, a.source)
            continue

        key = (a.component_class, a.description)
        if key in keys:
            for attr, value in a.attributes.items():
                _fill(keys[key], attr, value, a.source)
            continue
        if a.unit not in UNITS or a.quantity is None or not (math.isfinite(a.quantity) and a.quantity >= 0):
            logger.warning("dropping entry %r from %s: quantity %s %s is not valid",
                           a.description, a.source, a.quantity, a.unit)
            continue
        entry = InventoryEntry(component_class=a.component_class, description=a.description,
                               quantity=a.quantity, unit=a.unit, attributes=dict(a.attributes))
        keys[key] = len(entries)
        entries.append(entry)
        provenance.append(a.source)
        added.append(entry)

    updated = lci.model_copy(update={'entries': tuple(entries), 'provenance': tuple(provenance)})
    return updated, added, filled


# ---------------------------------------------------------------------------
# Self-play loop
# ---------------------------------------------------------------------------


def _exhausted(budget: Budget, rounds: int, elapsed_ms: float, documents: int) -> Optional[str]:
    if rounds >= budget.max_rounds:
        return "rounds"
    if elapsed_ms >= budget.max_thinking_ms:
        return "thinking time"
    if documents >= budget.max_documents:
        return "documents"
    return None


def run_selfplay(
    query: str,
    budget: Budget,
    backend: QueryBackend,
    detector: Optional[ComponentDetector] = None,
    *,
    clock: Optional[Clock] = None,
    docs_per_query: int = 1,
    da_builder: Callable[[str], DataAbstraction] = build_data_abstraction,
) -> Tuple[LifeCycleInventory, AgentTranscript]:
    """Refine an LCI for ``query`` until the critique is empty or a budget runs out

    Each query reads up to ``docs_per_query`` top-ranked documents that have
    not been read yet. Image documents go through the vision pipeline. A
    backend failure ends the run with status ``backend_error``; the
    transcript and the LCI built so far are kept.
    """
    detector = detector or BlobDetector()
    clock = clock or SimulatedClock()
    da = da_builder(query)
    lci = LifeCycleInventory(product=query, da=da)
    start = clock.now_ms()

    rounds: List[RoundRecord] = []
    read: List[str] = []
    seen = set()
    tokens = 0
    grace = 0.0
    status: Status = "converged"
    error: Optional[str] = None

    while True:
        queries = critique(lci, da)
        if not queries:
            break
        reason = _exhausted(budget, len(rounds), clock.now_ms() - start, len(read))
        if reason is not None:
            logger.info("self-play for %r stopped after %d round(s): %s budget exhausted",
                        query, len(rounds), reason)
            status = "budget_exhausted"
            break

        started = clock.now_ms() - start
        clock.charge('critique')
        retrievals: List[Retrieval] = []
        added: List[InventoryEntry] = []
        filled: List[FilledAttribute] = []
        try:
            for q in queries:
                if len(read) >= budget.max_documents:
                    break
                clock.charge('search')
                fresh = [d for d in backend.search(q.text) if d.doc_id not in seen][:docs_per_query]
                fresh = fresh[:budget.max_documents - len(read)]
                if not fresh:
                    continue
                batch: List[Assertion] = []
                done: List[str] = []
                charged = 0
                failure: Optional[BackendError] = None
                for doc in fresh:
                    clock.charge('read')
                    try:
                        found, doc_tokens = document_assertions(doc, q, backend, detector)
                    except BackendError as exc:
                        failure = exc
                        break
                    batch.extend(found)
                    charged += doc_tokens
                    done.append(doc.doc_id)
                # documents answered before a failure still count
                if done:
                    lci, new_entries, new_attrs = apply_assertions(lci, batch)
                    read.extend(done)
                    seen.update(done)
                    tokens += charged
                    retrievals.append(Retrieval(query=q, doc_ids=tuple(done)))
                    added.extend(new_entries)
                    filled.extend(new_attrs)
                if failure is not None:
                    raise failure
        except BackendError as exc:
            logger.error("backend failure in round %d for %r: %s", len(rounds) + 1, query, exc)
            status, error = "backend_error", str(exc)

        ended = clock.now_ms() - start
        grace = max(grace, ended - started)
        rounds.append(RoundRecord(
            index=len(rounds) + 1, started_ms=started, ended_ms=ended, queries=tuple(queries),
            retrievals=tuple(retrievals), entries_added=tuple(added), attributes_filled=tuple(filled),
        ))
        logger.debug("round %d: %d queries, %d docs, +%d entries, +%d attributes",
                     len(rounds), len(queries), sum(len(r.doc_ids) for r in retrievals),
                     len(added), len(filled))
        if status == "backend_error":
            break

    transcript = AgentTranscript(
        product=query, da=da, budget=budget, rounds=tuple(rounds),
        elapsed_ms=clock.now_ms() - start, grace_ms=grace,
        documents_read=len(read), reasoning_steps=len(rounds), tokens_used=tokens,
        status=status, error=error,
    )
    return lci, transcript


def replay_transcript(transcript: AgentTranscript, corpus: Corpus, backend: QueryBackend,
                      detector: Optional[ComponentDetector] = None) -> LifeCycleInventory:
    """Rebuild the LCI by re-reading the transcript's documents in order"""
    detector = detector or BlobDetector()
    lci = LifeCycleInventory(product=transcript.product, da=transcript.da)
    for record in transcript.rounds:
        for retrieval in record.retrievals:
            batch: List[Assertion] = []
            for doc_id in retrieval.doc_ids:
                found, _ = document_assertions(corpus.get(doc_id), retrieval.query, backend, detector)
                batch.extend(found)
            lci, _, _ = apply_assertions(lci, batch)
    return lci


__all__ = [
    "TRANSCRIPT_SCHEMA_VERSION",
    "Budget",
    "Clock",
    "SimulatedClock",
    "WallClock",
    "Retrieval",
    "FilledAttribute",
    "RoundRecord",
    "AgentTranscript",
    "critique",
    "document_assertions",
    "apply_assertions",
    "run_selfplay",
    "replay_transcript",
]
