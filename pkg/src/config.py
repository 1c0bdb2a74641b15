import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from src.errors import ConfigError


def get_setting(name: str, default=None):
    """Read a setting from env vars, falling back to the given default."""
    value = os.environ.get(name)
    if value is not None and value.strip():
        return value.strip()
    if default is not None:
        return default
    raise KeyError(f"Missing required setting: {name}")


@dataclass(frozen=True)
class LoggingSettings:
    level: str
    log_file: str


def load_logging_settings(level: str | None = None, log_file: str | None = None) -> LoggingSettings:
    level = (level or get_setting("LDS_LOG_LEVEL", "INFO")).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"Unknown log level '{level}'.")
    return LoggingSettings(
        level=level,
        log_file=log_file if log_file is not None else get_setting("LDS_LOG_FILE", ""),
    )


def default_workers() -> int:
    raw = get_setting("LDS_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigError(f"LDS_WORKERS must be an integer, got '{raw}'.") from exc
    if workers < 1:
        raise ConfigError("LDS_WORKERS must be >= 1.")
    return workers


SWEEP_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["data", "d", "train_fraction", "horizon"],
    "additionalProperties": False,
    "properties": {
        "data": {"type": "string", "minLength": 1},
        "d": {"type": "integer", "minimum": 1},
        "grid": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "array",
                "minItems": 2,
                "maxItems": 2,
                "items": {"type": "number", "minimum": 0},
            },
        },
        "grid_spec": {
            "type": "object",
            "required": ["lo", "hi", "num"],
            "additionalProperties": False,
            "properties": {
                "lo": {"type": "number"},
                "hi": {"type": "number"},
                "num": {"type": "integer", "minimum": 1},
                "k": {"type": "number", "minimum": 0},
            },
        },
        "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "horizon": {"type": "integer", "minimum": 1},
        "max_em_iters": {"type": "integer", "minimum": 1},
        "max_inner_iters": {"type": "integer", "minimum": 1},
        "em_tol": {"type": "number", "exclusiveMinimum": 0},
        "c_penalty": {"enum": ["whitened", "frobenius"]},
        "workers": {"type": "integer", "minimum": 1},
    },
}


@dataclass(frozen=True)
class SweepConfig:
    data: str
    d: int
    grid: tuple[tuple[float, float], ...]
    train_fraction: float
    horizon: int
    max_em_iters: int
    max_inner_iters: int
    em_tol: float
    c_penalty: str
    workers: int


def proportional_grid(lo: float = -6.0, hi: float = 4.0, num: int = 11, k: float = 1.0) -> tuple[tuple[float, float], ...]:
    """Log grid of lambda_C from 10**lo to 10**hi with lambda_A = k * lambda_C."""
    return tuple((float(k * lam), float(lam)) for lam in np.logspace(lo, hi, num))


def load_sweep_config(path: str | Path) -> SweepConfig:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as infile:
            raw = yaml.safe_load(infile)
    except OSError as exc:
        raise ConfigError(f"Could not read sweep config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Sweep config {path} is not valid YAML: {exc}") from exc

    try:
        jsonschema.validate(raw, SWEEP_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"Invalid sweep config {path}: {exc.message}") from exc

    if ("grid" in raw) == ("grid_spec" in raw):
        raise ConfigError("Sweep config needs exactly one of 'grid' or 'grid_spec'.")
    if "grid" in raw:
        grid = tuple((float(a), float(c)) for a, c in raw["grid"])
    else:
        spec = raw["grid_spec"]
        grid = proportional_grid(spec["lo"], spec["hi"], spec["num"], spec.get("k", 1.0))

    data = Path(raw["data"])
    if not data.is_absolute():
        data = path.parent / data

    return SweepConfig(
        data=str(data),
        d=raw["d"],
        grid=grid,
        train_fraction=float(raw["train_fraction"]),
        horizon=raw["horizon"],
        max_em_iters=raw.get("max_em_iters", 30),
        max_inner_iters=raw.get("max_inner_iters", 30),
        em_tol=float(raw.get("em_tol", 1e-6)),
        c_penalty=raw.get("c_penalty", "whitened"),
        workers=raw.get("workers", default_workers()),
    )
