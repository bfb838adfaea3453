"""Run configuration: hyperparameters of the repair loop."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .errors import ConfigError, InvalidConfig


@dataclass(frozen=True)
class RepairConfig:
    """Hyperparameters of one repair run.

    n: samples per model query; m: replacements tried per faulty token;
    top_k: faulty tokens refined per candidate; alpha: positional decay;
    budget: cap on generated patches; logprob_depth: top-K probabilities
    requested per token.
    """

    n: int = 2
    m: int = 3
    top_k: int = 3
    alpha: float = 0.5
    budget: int = 50
    temperature: float = 1.0
    max_tokens: int = 256
    logprob_depth: int = 5
    seed: int = 0
    template: str = "default"
    parallelism: int = 1

    def validate(self) -> "RepairConfig":
        for name in ("n", "m", "top_k", "budget", "max_tokens", "parallelism"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive; got {getattr(self, name)}")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidConfig(f"alpha must lie in (0, 1]; got {self.alpha}")
        if self.temperature < 0:
            raise InvalidConfig("temperature must be non-negative")
        if self.logprob_depth < max(2, self.m + 1):
            raise InvalidConfig(
                f"logprob_depth {self.logprob_depth} too shallow for m={self.m} "
                f"(need at least {max(2, self.m + 1)})")
        return self

    @property
    def refinement_cost(self) -> int:
        return self.top_k * self.m

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, data: Mapping) -> "RepairConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(fields)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            kind = type(fields[key].default)
            try:
                kwargs[key] = kind(value) if kind is not bool else _as_bool(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: cannot interpret {value!r} as {kind.__name__}") from exc
            if kind is int and isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return cls(**kwargs)

    def with_overrides(self, overrides: Mapping) -> "RepairConfig":
        merged = self.to_dict()
        merged.update(overrides)
        return RepairConfig.from_mapping(merged)


def _as_bool(value) -> bool:
    if isinstance(value, str):
        return value.lower() in ("1", "true", "yes", "on")
    return bool(value)


def default_config_text() -> str:
    return (resources.files("tokenrepair") / "default_config.yaml").read_text(encoding="utf-8")


def load_config(path=None) -> RepairConfig:
    """Read a flat ``key: value`` YAML file; ``None`` loads the shipped defaults."""
    try:
        text = default_config_text() if path is None else Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError("config must be a flat mapping of RepairConfig keys")
    return RepairConfig.from_mapping(data)


def parse_overrides(pairs: Iterable[str]) -> dict:
    """``["budget=20", "alpha=0.8"]`` -> ``{"budget": 20, "alpha": 0.8}``."""
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or key.strip() not in RepairConfig.keys():
            raise ConfigError(f"bad override {pair!r}; expected KEY=VALUE with a RepairConfig key")
        out[key.strip()] = yaml.safe_load(value)
    return out
