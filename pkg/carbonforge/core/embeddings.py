"""
Deterministic text embeddings.

The default provider hashes character n-grams (scikit-learn's
HashingVectorizer), so identical text always maps to the identical vector
and nothing touches the network.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Iterable, Tuple

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

logger = logging.getLogger(__name__)


class EmbeddingProvider(ABC):
    """Maps text to a fixed-width vector of finite reals

    Implementations must be deterministic and safe for concurrent calls.
    """

    name: str = "base"
    dim: int = 0

    @abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Embed one text"""

    def embed_many(self, texts: Iterable[str]) -> np.ndarray:
        rows = [self.embed(text) for text in texts]
        if not rows:
            return np.zeros((0, self.dim))
        return np.vstack(rows)


class HashingEmbedder(EmbeddingProvider):
    """Seeded character n-gram hashing embedder"""

    name = "hashing"

    def __init__(self, dim: int = 256, ngram_range: Tuple[int, int] = (3, 5), seed: int = 0,
                 cache_size: int = 4096):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._vectorizer = HashingVectorizer(
            n_features=dim,
            analyzer="char_wb",
            ngram_range=ngram_range,
            lowercase=True,
            alternate_sign=False,
            norm="l2",
        )
        # seeded sign flip; norms and cosines are unchanged
        self._signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=dim)
        self._cached = lru_cache(maxsize=cache_size)(self._embed_uncached)

    def _embed_uncached(self, text: str) -> np.ndarray:
        row = self._vectorizer.transform([text]).toarray()[0]
        vector = row * self._signs
        vector.flags.writeable = False
        return vector

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)


class TextProjector:
    """Fixed Gaussian random projection from embedding space to a few named dims"""

    def __init__(self, in_dim: int, out_dim: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.matrix = rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(in_dim, out_dim))

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f"text_{i:02d}" for i in range(self.out_dim))

    def project(self, vector: np.ndarray) -> np.ndarray:
        return np.asarray(vector, dtype=float) @ self.matrix


def cosine_similarities(query: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``query`` against every row of ``matrix`` (0 for zero vectors)"""
    if matrix.shape[0] == 0:
        return np.zeros(0)
    q_norm = float(np.linalg.norm(query))
    row_norms = np.linalg.norm(matrix, axis=1)
    denom = row_norms * q_norm
    dots = matrix @ query
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, -1.0, 1.0)


__all__ = [
    "EmbeddingProvider",
    "HashingEmbedder",
    "TextProjector",
    "cosine_similarities",
]
