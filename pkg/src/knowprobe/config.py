"""Run configuration: one declarative YAML/JSON file plus command-line overrides.

Example::

    endpoints:
      - {id: bert-base, kind: mask-fill, base_url: "http://localhost:8000/fill", max_k: 100}
      - {id: gpt, kind: next-token, base_url: "${GPT_URL}", auth: GPT_API_KEY, max_k: 5}
      - {id: replay, kind: fixture, base_url: fixtures/base.jsonl}
    facts: data/facts.jsonl
    templates: data/templates.jsonl
    mode: explicit
    base: bert-base
    k: 100
    thresholds: {kl_ratio: 3, kl_abs: 0.5, margin: 0.5, min_confidence: 0.95}

``${VAR}`` anywhere in a string value is replaced from the environment.
Relative paths resolve against the config file's directory. Secrets belong in
``auth``, which names an environment variable and is never expanded here.
"""

from __future__ import annotations

import os
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import yaml

from .client import FIXTURE, ModelEndpoint, default_cache_dir, load_fixture
from .datasets import DEFAULT_RANK_THRESHOLD, DEFAULT_SEED
from .distributions import MODES
from .errors import ConfigError
from .evaluation import (
    DEFAULT_KL_ABS,
    DEFAULT_KL_RATIO,
    DEFAULT_MARGIN,
    DEFAULT_MIN_CONFIDENCE,
    DEFAULT_MIN_COUNT,
)
from .instill import DEFAULT_K

METRIC_CHOICES = ("entropy", "kl", "rank", "all")
_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class Thresholds:
    kl_ratio: float = DEFAULT_KL_RATIO
    kl_abs: float = DEFAULT_KL_ABS
    margin: float = DEFAULT_MARGIN
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    min_count: int = DEFAULT_MIN_COUNT
    rank_threshold: int = DEFAULT_RANK_THRESHOLD
    rule: str = "gap"

    def validate(self) -> None:
        if not self.kl_ratio >= 1:
            raise ConfigError(f"kl_ratio must be >= 1, got {self.kl_ratio}")
        if not self.kl_abs > 0:
            raise ConfigError(f"kl_abs must be > 0, got {self.kl_abs}")
        if not self.margin >= 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if not 0 <= self.min_confidence <= 1:
            raise ConfigError(f"min_confidence must lie in [0, 1], got {self.min_confidence}")
        if int(self.min_count) != self.min_count or self.min_count < 1:
            raise ConfigError(f"min_count must be a positive integer, got {self.min_count}")
        if int(self.rank_threshold) != self.rank_threshold or self.rank_threshold < 1:
            raise ConfigError(f"rank_threshold must be a positive integer, got {self.rank_threshold}")
        if self.rule not in ("gap", "spread"):
            raise ConfigError(f"rule must be 'gap' or 'spread', got {self.rule!r}")


@dataclass
class RunConfig:
    endpoints: List[ModelEndpoint] = field(default_factory=list)
    facts_path: Optional[str] = None
    templates_path: Optional[str] = None
    mode: str = "explicit"
    base: Optional[str] = None
    instilled: Optional[str] = None
    metric: str = "all"
    k: int = DEFAULT_K
    seed: int = DEFAULT_SEED
    sample: Optional[int] = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    out_dir: str = "knowprobe-out"
    cache_dir: Optional[str] = None
    max_in_flight: int = 4
    classifications_path: Optional[str] = None
    scores_path: Optional[str] = None
    levels_path: Optional[str] = None

    def endpoint_map(self):
        return {e.id: e for e in self.endpoints}

    def metrics(self, allowed=("entropy", "kl", "rank")) -> List[str]:
        chosen = [m for m in ("rank", "entropy", "kl") if m in allowed] if self.metric == "all" else [self.metric]
        bad = [m for m in chosen if m not in allowed]
        if bad:
            raise ConfigError(f"metric {bad[0]!r} is not available here; choose from {allowed}")
        return chosen

    def effective_cache_dir(self) -> Path:
        if os.environ.get("KNOWPROBE_CACHE_DIR") or not self.cache_dir:
            return default_cache_dir()
        return Path(self.cache_dir)

    def validate(self, need_facts: bool = True) -> None:
        ids = [e.id for e in self.endpoints]
        if len(set(ids)) != len(ids):
            raise ConfigError("endpoint ids must be unique")
        known = set(ids)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.metric not in METRIC_CHOICES:
            raise ConfigError(f"metric must be one of {METRIC_CHOICES}, got {self.metric!r}")
        for name in ("base", "instilled"):
            ref = getattr(self, name)
            if ref is not None and ref not in known:
                raise ConfigError(f"{name} endpoint {ref!r} is not configured (known: {sorted(known)})")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")
        for ref in (self.base, self.instilled):
            if ref is not None and self.k > self.endpoint_map()[ref].max_k:
                raise ConfigError(f"k={self.k} exceeds max_k of endpoint {ref!r}")
        if self.sample is not None and self.sample < 1:
            raise ConfigError("sample must be a positive integer")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if need_facts and (not self.facts_path or not self.templates_path):
            raise ConfigError("both a facts file and a templates file are required")
        self.thresholds.validate()

    def snapshot(self) -> dict:
        """JSON-ready view of the resolved configuration (secret values excluded)."""
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["endpoints"] = [e.to_dict() for e in self.endpoints]
        data["thresholds"] = asdict(self.thresholds)
        data["cache_dir"] = str(self.effective_cache_dir())
        return data


def _interpolate(value):
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"config references unset environment variable {name}")
            return os.environ[name]
        return _VAR.sub(sub, value)
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: (v if k == "auth" else _interpolate(v)) for k, v in value.items()}
    return value


def _resolve(path: Optional[str], root: Optional[Path]) -> Optional[str]:
    if path is None:
        return None
    p = Path(path).expanduser()
    if root is not None and not p.is_absolute():
        p = root / p
    return str(p)


_ALIASES = {"facts": "facts_path", "templates": "templates_path", "out": "out_dir",
            "classifications": "classifications_path", "scores": "scores_path", "levels": "levels_path"}
_PATH_FIELDS = ("facts_path", "templates_path", "out_dir", "cache_dir", "classifications_path",
                "scores_path", "levels_path")


def build_endpoint(raw: dict, root: Optional[Path] = None) -> ModelEndpoint:
    raw = dict(raw)
    try:
        if raw.get("kind") == FIXTURE:
            path = _resolve(raw["base_url"], root)
            return load_fixture(path, endpoint_id=raw["id"], max_k=raw.get("max_k"))
        known = {f.name for f in fields(ModelEndpoint)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown endpoint keys {sorted(unknown)}")
        return ModelEndpoint(**raw)
    except KeyError as exc:
        raise ConfigError(f"endpoint entry missing {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ConfigError(f"bad endpoint entry: {exc}") from None


def config_from_dict(data: dict, root: Optional[Path] = None) -> RunConfig:
    if "toolkit" in data and "config" in data:  # a run manifest
        data = data["config"]
    data = _interpolate(dict(data))
    data = {_ALIASES.get(k, k): v for k, v in data.items()}
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    endpoints = [build_endpoint(e, root) for e in data.pop("endpoints", []) or []]
    thresholds = data.pop("thresholds", None) or {}
    try:
        thresholds = Thresholds(**thresholds)
    except TypeError as exc:
        raise ConfigError(f"bad thresholds: {exc}") from None
    for name in _PATH_FIELDS:
        if data.get(name) is not None:
            data[name] = _resolve(data[name], root)
    return RunConfig(endpoints=endpoints, thresholds=thresholds, **data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return config_from_dict(data, path.parent.resolve())


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Apply non-None overrides; threshold names are routed to ``thresholds``."""
    thresholds = replace(config.thresholds, **{
        k: v for k, v in overrides.items() if v is not None and k in {f.name for f in fields(Thresholds)}
    })
    top = {k: v for k, v in overrides.items()
           if v is not None and k in {f.name for f in fields(RunConfig)} and k != "thresholds"}
    return replace(config, thresholds=thresholds, **top)
