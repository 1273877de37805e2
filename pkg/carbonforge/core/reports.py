"""
Report base: canonical JSON plus a flat CSV of the report's rows.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict

from .serialization import dumps_canonical


class Row(BaseModel):
    """One line of a report; frozen, serialized through its parent"""

    model_config = ConfigDict(frozen=True, extra="forbid")


class Report(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def rows(self) -> List[Dict[str, Any]]:
        """Flat rows for the CSV export; one row per report line"""
        raise NotImplementedError

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows())

    def to_json(self, path: Optional[Union[str, Path]] = None) -> bytes:
        data = dumps_canonical(self)
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_bytes(data)
        return data

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        text = self.to_frame().to_csv(index=False, lineterminator="\n")
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text, encoding="utf-8")
        return text


__all__ = ["Report", "Row"]
