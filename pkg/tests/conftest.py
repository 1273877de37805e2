"""
Shared fixtures for the carbonforge test suite
"""
import logging
from pathlib import Path

import pytest

from carbonforge.core.embeddings import HashingEmbedder

FIXTURES = Path(__file__).parent / "fixtures"
DEMO = Path(__file__).parent.parent / "data" / "demo"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def corpus_dir() -> Path:
    return FIXTURES / "corpus"


@pytest.fixture
def demo_dir() -> Path:
    return DEMO


@pytest.fixture(scope="session")
def provider() -> HashingEmbedder:
    return HashingEmbedder(dim=256, ngram_range=(3, 5), seed=0)


@pytest.fixture(autouse=True)
def reset_package_logger():
    """Undo handlers installed by configure_logging so caplog keeps working"""
    yield
    logger = logging.getLogger("carbonforge")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
