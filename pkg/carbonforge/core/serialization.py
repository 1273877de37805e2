"""
Canonical JSON helpers.

orjson with sorted keys and two-space indentation; pydantic models are
dumped in JSON mode first so tuples become lists and MISSING becomes null.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Union

import numpy as np
import orjson
from pydantic import BaseModel

_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY


def _default(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"Type is not JSON serializable: {type(obj).__name__}")


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    return obj


def dumps_canonical(obj: Any) -> bytes:
    """Serialize to canonical JSON bytes (trailing newline included)"""
    return orjson.dumps(to_jsonable(obj), default=_default, option=_OPTIONS) + b"\n"


def dumps_line(obj: Any) -> bytes:
    """Compact single-line JSON (sorted keys) for JSON-lines files and pipes"""
    return orjson.dumps(
        to_jsonable(obj), default=_default, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY
    )


def loads(data: Union[bytes, str]) -> Any:
    return orjson.loads(data)


def write_json(path: Union[str, Path], obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps_canonical(obj))
    return path


def read_json(path: Union[str, Path]) -> Any:
    return orjson.loads(Path(path).read_bytes())


__all__ = ["dumps_canonical", "dumps_line", "loads", "write_json", "read_json", "to_jsonable"]
