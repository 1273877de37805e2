"""
Carbonforge provider registry

Embedding providers, component detectors and retrieval backends are
looked up by kind and name. Third-party packages add their own through the
``carbonforge.providers`` entry-point group, naming each entry
``<kind>.<name>`` and pointing it at a factory ``(config, **context)``.
"""
from __future__ import annotations

import logging
from importlib.metadata import entry_points
from typing import Any, Callable, Dict, List, Tuple

from ..core.config import CarbonforgeConfig
from ..core.errors import ConfigError

logger = logging.getLogger(__name__)

ENTRY_POINT_GROUP = "carbonforge.providers"
KINDS: Tuple[str, ...] = ("embedding", "detector", "backend")

Factory = Callable[..., Any]


def _hashing_embedder(config: CarbonforgeConfig, **_: Any) -> Any:
    from ..core.embeddings import HashingEmbedder

    emb = config.embedding
    return HashingEmbedder(dim=emb.dim, ngram_range=(emb.ngram_min, emb.ngram_max), seed=emb.seed)


def _blob_detector(config: CarbonforgeConfig, **_: Any) -> Any:
    from ..core.vision import BlobDetector

    vis = config.vision
    return BlobDetector(threshold=vis.blob_threshold, sigma_factor=vis.blob_sigma, min_area=vis.blob_min_area)


def _subprocess_detector(config: CarbonforgeConfig, **_: Any) -> Any:
    from ..core.vision import SubprocessDetector

    if not config.vision.detector_command:
        raise ConfigError("vision.detector_command is required for the subprocess detector")
    return SubprocessDetector(config.vision.detector_command)


def _fixture_backend(config: CarbonforgeConfig, *, corpus: Any = None, **_: Any) -> Any:
    from ..agents.backends import FixtureBackend

    if corpus is None:
        raise ConfigError("the fixture backend needs a corpus directory")
    return FixtureBackend(corpus)


def _http_backend(config: CarbonforgeConfig, **_: Any) -> Any:
    from ..agents.backends import HttpBackend

    if not config.backend.url:
        raise ConfigError("the http backend needs backend.url or CARBONFORGE_BACKEND_URL")
    return HttpBackend(config.backend.url, api_key=config.backend.api_key,
                       timeout=config.backend.timeout_seconds)


class ProviderRegistry:
    """Factories keyed by (kind, name)"""

    def __init__(self) -> None:
        self._factories: Dict[Tuple[str, str], Factory] = {}
        self._entry_points_loaded = False

    def register(self, kind: str, name: str, factory: Factory) -> None:
        if kind not in KINDS:
            raise ConfigError(f"unknown provider kind {kind!r}; expected one of {list(KINDS)}")
        self._factories[(kind, name)] = factory

    def names(self, kind: str) -> List[str]:
        self._load_entry_points()
        return sorted(name for k, name in self._factories if k == kind)

    def create(self, kind: str, name: str, config: CarbonforgeConfig, **context: Any) -> Any:
        self._load_entry_points()
        try:
            factory = self._factories[(kind, name)]
        except KeyError:
            raise ConfigError(
                f"no {kind} provider named {name!r}; available: {self.names(kind)}"
            ) from None
        return factory(config, **context)

    def _load_entry_points(self) -> None:
        if self._entry_points_loaded:
            return
        self._entry_points_loaded = True
        eps = entry_points()
        group = eps.select(group=ENTRY_POINT_GROUP) if hasattr(eps, "select") else eps.get(ENTRY_POINT_GROUP, [])
        for ep in group:
            kind, _, name = ep.name.partition(".")
            if kind not in KINDS or not name:
                logger.warning("ignoring provider entry point %r: expected <kind>.<name>", ep.name)
                continue
            try:
                self.register(kind, name, ep.load())
            except Exception as exc:
                logger.warning("failed to load provider %s: %s", ep.name, exc)


def default_registry() -> ProviderRegistry:
    registry = ProviderRegistry()
    registry.register("embedding", "hashing", _hashing_embedder)
    registry.register("detector", "blob", _blob_detector)
    registry.register("detector", "subprocess", _subprocess_detector)
    registry.register("backend", "fixture", _fixture_backend)
    registry.register("backend", "http", _http_backend)
    return registry


__all__ = ["ENTRY_POINT_GROUP", "KINDS", "ProviderRegistry", "default_registry"]
