"""
Layered configuration: shipped defaults, user file, environment.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "default.yaml"
USER_CONFIG_PATH = Path.home() / ".carbonforge" / "config.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EstimatorSettings(_Section):
    k: int = Field(5, ge=1)


class EmbeddingSettings(_Section):
    provider: str = "hashing"
    dim: int = Field(256, ge=8)
    ngram_min: int = 3
    ngram_max: int = 5
    seed: int = 0
    text_dims: int = Field(16, ge=1)


class LciaSettings(_Section):
    threshold: float = Field(0.6, ge=0.0, le=1.0)
    fallback: bool = False
    k: int = Field(5, ge=1)
    mode: Literal["text_only", "text_plus_domain"] = "text_plus_domain"


class VisionSettings(_Section):
    cutoff: float = Field(32.0, gt=0)
    max_side: int = Field(512, ge=16)
    lambda_energy: float = 1.0
    detector: str = "blob"
    detector_command: List[str] = Field(default_factory=list)
    blob_threshold: float = 12.0
    blob_sigma: float = 3.0
    blob_min_area: int = 20


class BudgetSettings(_Section):
    max_thinking_ms: int = Field(40000, gt=0)
    max_rounds: int = Field(8, gt=0)
    max_documents: int = Field(32, gt=0)


class LatencySettings(_Section):
    critique_ms: int = Field(100, ge=0)
    search_ms: int = Field(300, ge=0)
    read_ms: int = Field(2000, ge=0)


class AgentSettings(_Section):
    backend: str = "fixture"
    docs_per_query: int = Field(1, ge=1)
    budget: BudgetSettings = Field(default_factory=BudgetSettings)
    latency: LatencySettings = Field(default_factory=LatencySettings)


class EvaluationSettings(_Section):
    k_folds: int = Field(5, ge=2)
    holdout: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = 0
    sizes: List[int] = Field(default_factory=lambda: [5, 10, 20, 40, 80, 120])
    repeats: int = Field(10, ge=1)


class ParallelSettings(_Section):
    max_workers: int = Field(4, ge=1)
    use_processes: bool = False


class LoggingSettings(_Section):
    level: str = "info"
    format: Literal["pretty", "json", "compact"] = "pretty"


class BackendSettings(_Section):
    url: Optional[str] = None
    api_key: Optional[str] = None
    timeout_seconds: float = 30.0
    llm_model: str = "gpt-4o-mini"


class CarbonforgeConfig(_Section):
    estimator: EstimatorSettings = Field(default_factory=EstimatorSettings)
    embedding: EmbeddingSettings = Field(default_factory=EmbeddingSettings)
    lcia: LciaSettings = Field(default_factory=LciaSettings)
    vision: VisionSettings = Field(default_factory=VisionSettings)
    agent: AgentSettings = Field(default_factory=AgentSettings)
    evaluation: EvaluationSettings = Field(default_factory=EvaluationSettings)
    parallel: ParallelSettings = Field(default_factory=ParallelSettings)
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    backend: BackendSettings = Field(default_factory=BackendSettings)


def _deep_merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping, got {type(data).__name__}")
    return data


def _apply_env(data: Dict[str, Any], environ: Dict[str, str]) -> Dict[str, Any]:
    backend = dict(data.get('backend') or {})
    if environ.get('CARBONFORGE_BACKEND_URL'):
        backend['url'] = environ['CARBONFORGE_BACKEND_URL']
    if environ.get('CARBONFORGE_API_KEY'):
        backend['api_key'] = environ['CARBONFORGE_API_KEY']
    data['backend'] = backend
    if environ.get('CARBONFORGE_LOG_LEVEL'):
        logging_section = dict(data.get('logging') or {})
        logging_section['level'] = environ['CARBONFORGE_LOG_LEVEL']
        data['logging'] = logging_section
    return data


def load_config(
    path: Optional[Union[str, Path]] = None,
    *,
    use_user_file: bool = True,
    environ: Optional[Dict[str, str]] = None,
) -> CarbonforgeConfig:
    """Defaults, then ~/.carbonforge/config.yaml (or ``path``), then env vars"""
    data = _read_yaml(DEFAULT_CONFIG_PATH) if DEFAULT_CONFIG_PATH.exists() else {}

    if path is not None:
        overlay_path = Path(path)
        if not overlay_path.exists():
            raise ConfigError(f"config file not found: {overlay_path}")
        data = _deep_merge(data, _read_yaml(overlay_path))
    elif use_user_file and USER_CONFIG_PATH.exists():
        data = _deep_merge(data, _read_yaml(USER_CONFIG_PATH))

    data = _apply_env(data, dict(os.environ if environ is None else environ))

    try:
        return CarbonforgeConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


__all__ = [
    "CarbonforgeConfig",
    "EstimatorSettings",
    "EmbeddingSettings",
    "LciaSettings",
    "VisionSettings",
    "AgentSettings",
    "BudgetSettings",
    "LatencySettings",
    "EvaluationSettings",
    "ParallelSettings",
    "LoggingSettings",
    "BackendSettings",
    "load_config",
]
