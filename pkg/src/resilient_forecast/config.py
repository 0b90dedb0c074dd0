"""Strict JSON <-> dataclass conversion for the run configuration."""

from __future__ import annotations

import dataclasses
import enum
import json
import types
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def from_dict(cls, data: dict | None):
    """Build dataclass ``cls`` from ``data``; unknown keys are rejected."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{cls.__name__}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            raise ConfigError(f"{where}: invalid value {value!r}") from None
    if origin in (tuple, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array")
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(f"{where}: expected {len(args)} items")
            return tuple(_coerce(a, v, where) for a, v in zip(args, value))
        item = args[0] if args else Any
        return tuple(_coerce(item, v, where) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


@dataclass(frozen=True)
class RunConfig:
    """Every section is optional; missing sections take their defaults."""

    # Imported lazily in the factories below to avoid import cycles.
    model: Any = None
    train: Any = None
    sampler: Any = None
    filter: Any = None
    generator: Any = None
    seed: int = 0

    def __post_init__(self) -> None:
        from resilient_forecast.anomaly import FilterConfig
        from resilient_forecast.model import ModelConfig
        from resilient_forecast.synthetic import GeneratorConfig
        from resilient_forecast.training import SamplerConfig, TrainConfig

        defaults = {
            "model": ModelConfig,
            "train": TrainConfig,
            "sampler": SamplerConfig,
            "filter": FilterConfig,
            "generator": GeneratorConfig,
        }
        for name, cls in defaults.items():
            value = getattr(self, name)
            if value is None:
                object.__setattr__(self, name, cls())
            elif isinstance(value, dict):
                object.__setattr__(self, name, from_dict(cls, value))

    @classmethod
    def from_json(cls, data: dict) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"RunConfig: unknown keys {sorted(unknown)}")
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("RunConfig.seed: expected an integer")
        sections = {k: v for k, v in data.items() if k != "seed"}
        for k, v in sections.items():
            if not isinstance(v, dict):
                raise ConfigError(f"RunConfig.{k}: expected an object")
        return cls(seed=seed, **sections)

    def to_json(self) -> dict:
        return to_dict(self)


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return RunConfig.from_json(data)
