"""
Carbonforge error hierarchy.

Every error carries the process exit code the CLI maps it to.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional


class CarbonforgeError(Exception):
    """Base class for all carbonforge failures"""

    exit_code: int = 2

    def __init__(self, message: str, *, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': type(self).__name__,
            'message': self.message,
            'details': self.details,
        }


class DataValidationError(CarbonforgeError, ValueError):
    """Input data violates a schema or a domain invariant"""

    exit_code = 2


class ConfigError(CarbonforgeError):
    """Configuration file could not be read or validated"""

    exit_code = 2


class EstimationError(CarbonforgeError, ValueError):
    """An estimator could not produce a result for the given query"""

    exit_code = 2


class UnmatchedEntriesError(CarbonforgeError):
    """LCIA could not resolve an emission factor for one or more entries"""

    exit_code = 2

    def __init__(self, entries: List[int], reasons: List[str]):
        listing = ", ".join(f"#{i} ({r})" for i, r in zip(entries, reasons))
        super().__init__(
            f"unmatched inventory entries: {listing}",
            details={'entries': entries, 'reasons': reasons},
        )
        self.entries = entries


class BackendError(CarbonforgeError):
    """A retrieval backend, detector process or LLM endpoint failed"""

    exit_code = 3


__all__ = [
    "CarbonforgeError",
    "DataValidationError",
    "ConfigError",
    "EstimationError",
    "UnmatchedEntriesError",
    "BackendError",
]
