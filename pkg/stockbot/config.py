"""Run configuration: defaults, optional JSON file, CLI overrides."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from stockbot.errors import ConfigError, InputNotFoundError
from stockbot.forecaster import ForecastMode
from stockbot.models import ModelSpec
from stockbot.trainer import TrainConfig

CONFIG_FILENAME = "stockbot.json"
OUT_ENV_VAR = "STOCKBOT_OUT"


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    csv: Optional[str] = Field(default=None, description="Path to a Date/Adj Close CSV")
    ticker: Optional[str] = Field(default=None, description="Defaults to the CSV file stem")
    start_date: Optional[str] = "2010-01-01"
    end_date: Optional[str] = "2020-12-31"
    train_ratio: float = Field(default=0.8, gt=0.0, lt=1.0)

    def resolved_ticker(self) -> str:
        if self.ticker:
            return self.ticker
        if self.csv:
            return Path(self.csv).stem
        return "default"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    modes: List[ForecastMode] = Field(
        default_factory=lambda: [ForecastMode.AUTOREGRESSIVE, ForecastMode.TEACHER_FORCING]
    )
    out: str = "runs"

    @field_validator("modes")
    @classmethod
    def _modes_not_empty(cls, v: List[ForecastMode]) -> List[ForecastMode]:
        if not v:
            raise ValueError("at least one forecast mode is required")
        return list(dict.fromkeys(v))


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def validate_config(data: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(dict(data))
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from exc


def get_config_path() -> Path:
    """``stockbot.json`` in the working directory."""
    return Path.cwd() / CONFIG_FILENAME


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise InputNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name} must hold a JSON object")
    return data


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Apply ``{"section.field": value}`` overrides to a nested dict."""
    merged = json.loads(json.dumps(base))
    for dotted, value in overrides.items():
        node = merged
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return merged


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Defaults < config file (``path`` or ``./stockbot.json``) < ``overrides``.

    ``STOCKBOT_OUT`` replaces ``out`` unless ``overrides`` sets it.
    """
    if path is not None:
        base = read_config_file(path)
    elif get_config_path().is_file():
        base = read_config_file(get_config_path())
    else:
        base = {}
    overrides = dict(overrides or {})
    env_out = os.environ.get(OUT_ENV_VAR)
    if env_out and "out" not in overrides:
        overrides["out"] = env_out
    return validate_config(_merge(base, overrides))


def explicit_model_fields(path: Optional[Union[str, Path]], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Model fields the user set on purpose, from the file or the command line."""
    fields: Dict[str, Any] = {}
    source: Dict[str, Any] = {}
    if path is not None:
        source = read_config_file(path)
    elif get_config_path().is_file():
        source = read_config_file(get_config_path())
    fields.update(source.get("model", {}) or {})
    for dotted, value in overrides.items():
        if dotted.startswith("model."):
            fields[dotted.split(".", 1)[1]] = value
    return fields
