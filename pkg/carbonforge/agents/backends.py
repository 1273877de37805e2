"""
Retrieval backends for the self-play loop.

A backend answers two calls: ``search`` maps a critic query to ranked
documents and ``answer`` turns documents into structured assertions.
``FixtureBackend`` serves a pre-fetched corpus deterministically;
``HttpBackend`` speaks the same contract over HTTP JSON.

Fixture documents state facts one per line::

    ENTRY | IC | application processor | 1 | count | technology_node=5
    ATTR  | battery | li-ion battery pack | capacity_wh | 15.1
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections import defaultdict
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import httpx
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..core.errors import BackendError
from ..core.ingestion import Corpus
from ..core.models import DocumentFixture

logger = logging.getLogger(__name__)

AttributeValue = Union[str, float, None]


class CriticQuery(BaseModel):
    """A targeted question raised by the critic"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["class", "attribute"]
    component_class: str
    text: str = Field(min_length=1)
    attribute: Optional[str] = None
    entry_description: Optional[str] = None


class Assertion(BaseModel):
    """A fact extracted from one document

    ``entry`` assertions add (or complete) an inventory entry;
    ``attribute`` assertions fill one attribute on existing entries.
    A description of ``*`` targets every entry of the class.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["entry", "attribute"]
    component_class: str
    description: str
    source: str
    quantity: Optional[float] = None
    unit: Optional[str] = None
    attributes: Dict[str, AttributeValue] = Field(default_factory=dict)
    attribute: Optional[str] = None
    value: AttributeValue = None


class Answer(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    assertions: Tuple[Assertion, ...] = ()
    tokens: int = Field(0, ge=0)


class QueryBackend(ABC):
    """Search plus answer, shared by the fixture and live backends"""

    name: str = "backend"

    @abstractmethod
    def search(self, query: str, modality: Optional[str] = None) -> List[DocumentFixture]:
        """Documents relevant to ``query``, best first"""

    @abstractmethod
    def answer(self, question: CriticQuery, docs: Sequence[DocumentFixture]) -> Answer:
        """Structured assertions found in ``docs`` for ``question``"""

    def close(self) -> None:
        pass

    def __enter__(self) -> "QueryBackend":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def count_words(text: str) -> int:
    return len(text.split())


def _coerce(raw: str) -> AttributeValue:
    raw = raw.strip()
    if not raw:
        return None
    try:
        return float(raw)
    except ValueError:
        return raw


def _parse_attributes(raw: str) -> Dict[str, AttributeValue]:
    attrs: Dict[str, AttributeValue] = {}
    for part in raw.split(";"):
        if "=" not in part:
            continue
        key, value = part.split("=", 1)
        if key.strip():
            attrs[key.strip()] = _coerce(value)
    return attrs


def parse_assertions(text: str, source: str) -> List[Assertion]:
    """Read ENTRY/ATTR lines; anything else is prose and ignored"""
    out: List[Assertion] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = [f.strip() for f in line.split("|")]
        tag = fields[0].upper()
        if tag == "ENTRY" and len(fields) in (5, 6):
            quantity = _coerce(fields[3])
            if not isinstance(quantity, float):
                logger.debug("%s:%d: non-numeric quantity %r", source, lineno, fields[3])
                continue
            out.append(Assertion(
                kind="entry", component_class=fields[1], description=fields[2], source=source,
                quantity=quantity, unit=fields[4],
                attributes=_parse_attributes(fields[5]) if len(fields) == 6 else {},
            ))
        elif tag == "ATTR" and len(fields) == 5:
            out.append(Assertion(
                kind="attribute", component_class=fields[1], description=fields[2], source=source,
                attribute=fields[3], value=_coerce(fields[4]),
            ))
        elif tag in ("ENTRY", "ATTR"):
            logger.debug("%s:%d: malformed %s line skipped", source, lineno, tag)
    return out


class FixtureBackend(QueryBackend):
    """Deterministic backend over a pre-fetched corpus

    A document matches when one of its query keys occurs in the lowercased
    query. Ranking: more matching keys first, then the longest matching
    key, then doc_id. Tokens are whitespace-separated words of the question
    and the documents read.
    """

    name = "fixture"

    def __init__(self, corpus: Corpus):
        self.corpus = corpus

    def search(self, query: str, modality: Optional[str] = None) -> List[DocumentFixture]:
        text = query.lower()
        hits: Dict[str, List[int]] = defaultdict(list)
        for key, doc_ids in self.corpus.index.items():
            if key and key in text:
                for doc_id in doc_ids:
                    hits[doc_id].append(len(key))
        ranked = sorted(hits, key=lambda d: (-len(hits[d]), -max(hits[d]), d))
        docs = [self.corpus.get(doc_id) for doc_id in ranked]
        return [d for d in docs if modality is None or d.modality == modality]

    def answer(self, question: CriticQuery, docs: Sequence[DocumentFixture]) -> Answer:
        assertions: List[Assertion] = []
        tokens = count_words(question.text)
        for doc in docs:
            if doc.modality == "image":
                continue
            assertions.extend(parse_assertions(doc.payload, doc.doc_id))
            tokens += count_words(doc.payload)
        return Answer(assertions=tuple(assertions), tokens=tokens)


class HttpBackend(QueryBackend):
    """Live backend speaking JSON over HTTP

    ``POST /search`` with ``{"query", "modality"}`` returns
    ``{"documents": [...]}``; ``POST /answer`` with ``{"question",
    "documents"}`` returns ``{"assertions": [...], "usage": {"total_tokens"}}``.
    Transport failures and malformed payloads raise BackendError.
    """

    name = "http"

    def __init__(self, base_url: str, api_key: Optional[str] = None, timeout: float = 30.0,
                 client: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._owns_client = client is None
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def _post(self, path: str, payload: Mapping[str, Any]) -> Dict[str, Any]:
        try:
            resp = self._client.post(path, json=dict(payload), headers=self._headers)
            resp.raise_for_status()
            data = resp.json()
        except httpx.HTTPError as exc:
            raise BackendError(f"backend {path} request failed: {exc}",
                               details={'url': self.base_url, 'path': path}) from exc
        except ValueError as exc:
            raise BackendError(f"backend {path} returned invalid JSON",
                               details={'url': self.base_url, 'path': path}) from exc
        if not isinstance(data, dict):
            raise BackendError(f"backend {path} returned {type(data).__name__}, expected an object")
        return data

    def search(self, query: str, modality: Optional[str] = None) -> List[DocumentFixture]:
        data = self._post("/search", {'query': query, 'modality': modality})
        try:
            return [DocumentFixture.model_validate(d) for d in data.get('documents', [])]
        except ValidationError as exc:
            raise BackendError(f"backend /search returned malformed documents: {exc}") from exc

    def answer(self, question: CriticQuery, docs: Sequence[DocumentFixture]) -> Answer:
        data = self._post("/answer", {
            'question': question.model_dump(mode="json"),
            'documents': [d.model_dump(mode="json") for d in docs],
        })
        usage = data.get('usage') or {}
        try:
            return Answer(
                assertions=tuple(Assertion.model_validate(a) for a in data.get('assertions', [])),
                tokens=int(usage.get('total_tokens', 0)),
            )
        except (ValidationError, TypeError, ValueError) as exc:
            raise BackendError(f"backend /answer returned malformed assertions: {exc}") from exc

    def close(self) -> None:
        if self._owns_client:
            self._client.close()


__all__ = [
    "CriticQuery",
    "Assertion",
    "Answer",
    "QueryBackend",
    "count_words",
    "parse_assertions",
    "FixtureBackend",
    "HttpBackend",
]
