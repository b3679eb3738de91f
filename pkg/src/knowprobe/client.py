"""Top-k blank predictions from model endpoints, with fixture replay and an on-disk cache.

Two HTTP contracts are supported.

next-token
    ``POST {"prompt": <text before the blank>, "max_tokens": 1, "logprobs": k}``.
    The response carries ``(token, logprob)`` pairs for the first generated
    position, either as a top-level ``top_logprobs`` field or in the
    OpenAI-style ``choices[0].logprobs`` block.

mask-fill
    ``POST {"text": <prompt with the endpoint's mask token>, "top_k": k}``.
    The response is a list (or ``{"predictions": [...]}``) of ``(token, score)``
    pairs; scores are probabilities or log-probabilities per the endpoint's
    ``score_format``.

Fixture files replay scripted predictions, one JSON object per line::

    {"prompt": "Obama is married to ___", "k": 2, "entries": [["Michelle", 0.8], ["Hillary", 0.1]]}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import socket
import tempfile
import threading
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union
from urllib.parse import urlparse

import requests

from .datasets import iter_jsonl
from .distributions import SUM_TOL, TokenProb, TopKPrediction
from .errors import (
    ConfigError,
    EndpointContractError,
    FixtureMissError,
    InvalidInputError,
    KnowprobeError,
    NetworkError,
    ParseError,
)
from .instill import BLANK, LogprobQuery

logger = logging.getLogger(__name__)

NEXT_TOKEN = "next-token"
MASK_FILL = "mask-fill"
FIXTURE = "fixture"
KINDS = (NEXT_TOKEN, MASK_FILL, FIXTURE)

CACHE_ENV = "KNOWPROBE_CACHE_DIR"
RETRY_DELAYS = (0.5, 2.0, 8.0)
DEFAULT_MAX_IN_FLIGHT = 4
# Providers occasionally return top-k masses summing a hair above 1.
OVERSHOOT_SLACK = 1e-3


@dataclass(frozen=True)
class ModelEndpoint:
    id: str
    base_url: str
    kind: str
    auth: Optional[str] = None
    max_k: int = 100
    mask_token: str = "[MASK]"
    score_format: str = "prob"
    model: Optional[str] = None
    timeout: float = 30.0

    def __post_init__(self):
        if not self.id:
            raise ConfigError("endpoint id must be non-empty")
        if self.kind not in KINDS:
            raise ConfigError(f"endpoint {self.id!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if isinstance(self.max_k, bool) or not isinstance(self.max_k, int) or self.max_k < 1:
            raise ConfigError(f"endpoint {self.id!r}: max_k must be a positive integer")
        if self.score_format not in ("prob", "logprob"):
            raise ConfigError(f"endpoint {self.id!r}: score_format must be 'prob' or 'logprob'")

    def to_dict(self) -> dict:
        # auth is the name of an environment variable, never its value
        return {
            "id": self.id, "base_url": self.base_url, "kind": self.kind, "auth": self.auth,
            "max_k": self.max_k, "mask_token": self.mask_token, "score_format": self.score_format,
            "model": self.model, "timeout": self.timeout,
        }


@dataclass(frozen=True, eq=False)
class FixtureEndpoint(ModelEndpoint):
    table: Mapping[Tuple[str, int], TopKPrediction] = field(default_factory=dict, repr=False)

    def lookup(self, prompt: str, k: int) -> TopKPrediction:
        try:
            return self.table[(str(prompt), k)]
        except KeyError:
            raise FixtureMissError(f"fixture {self.id!r} has no entry for k={k}, prompt {str(prompt)!r}") from None


def load_fixture(path, endpoint_id: Optional[str] = None, max_k: Optional[int] = None) -> FixtureEndpoint:
    table: Dict[Tuple[str, int], TopKPrediction] = {}
    for lineno, raw in iter_jsonl(path):
        try:
            prompt, k, entries = raw["prompt"], raw["k"], raw["entries"]
            if not isinstance(prompt, str) or BLANK not in prompt:
                raise ParseError(f"prompt must be a string containing {BLANK!r}")
            pred = TopKPrediction.from_pairs(
                [(str(t), float(p)) for t, p in entries], k=int(k), residual_mass=raw.get("residual_mass")
            )
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except (KnowprobeError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        key = (prompt, pred.k)
        if key in table:
            raise ParseError(f"{path}:{lineno}: duplicate fixture key (k={pred.k}, prompt {prompt!r})")
        table[key] = pred
    if max_k is None:
        max_k = max((k for _, k in table), default=1)
    return FixtureEndpoint(
        id=endpoint_id or Path(path).stem, base_url=str(path), kind=FIXTURE, max_k=max_k, table=table
    )


def write_fixture(path, records: Sequence[Tuple[str, TopKPrediction]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for prompt, pred in records:
            fh.write(json.dumps({"prompt": str(prompt), **pred.to_dict()}, ensure_ascii=False) + "\n")


def cache_key(endpoint_id: str, query: LogprobQuery) -> str:
    prompt = query.prompt
    parts: list = [endpoint_id, str(prompt), query.k]
    if prompt.count(BLANK) != 1:
        parts.append(prompt.blank_index)
    return hashlib.sha256(json.dumps(parts, ensure_ascii=False).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CachedResponse:
    key: str
    prediction: TopKPrediction
    fetched_at: str


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "knowprobe"


class ResponseCache:
    """One JSON file per digest. Reads are lock-free; writes are serialized and atomic."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Optional[CachedResponse]:
        path = self._path(key)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
            return CachedResponse(raw["key"], TopKPrediction.from_dict(raw["prediction"]), raw["fetched_at"])
        except FileNotFoundError:
            return None
        except (ValueError, KeyError, TypeError, KnowprobeError) as exc:
            logger.warning("ignoring unreadable cache entry %s: %s", path, exc)
            return None

    def put(self, entry: CachedResponse) -> None:
        payload = json.dumps(
            {"key": entry.key, "fetched_at": entry.fetched_at, "prediction": entry.prediction.to_dict()},
            ensure_ascii=False, sort_keys=True,
        )
        with self._write_lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp, self._path(entry.key))
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise

    def keys(self) -> List[str]:
        if not self.directory.is_dir():
            return []
        return sorted(p.stem for p in self.directory.glob("*.json"))

    def size_bytes(self) -> int:
        return sum(self._path(k).stat().st_size for k in self.keys())

    def clear(self) -> int:
        with self._write_lock:
            keys = self.keys()
            for k in keys:
                self._path(k).unlink(missing_ok=True)
        return len(keys)


def _pairs(obj, where: str) -> List[Tuple[str, float]]:
    """Normalize ``[[tok, x]]``, ``[{"token": tok, ...}]`` or ``{tok: x}`` into pairs."""
    if isinstance(obj, Mapping):
        return [(t, v) for t, v in obj.items()]
    if not isinstance(obj, list):
        raise EndpointContractError(f"{where}: expected a list of (token, score) pairs")
    out = []
    for item in obj:
        if isinstance(item, Mapping):
            token = item.get("token", item.get("token_str"))
            value = item.get("logprob", item.get("score", item.get("prob")))
            out.append((token, value))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            out.append((item[0], item[1]))
        else:
            raise EndpointContractError(f"{where}: malformed entry {item!r}")
    return out


def _next_token_pairs(body) -> List[Tuple[str, float]]:
    if isinstance(body, Mapping) and "top_logprobs" in body:
        return _pairs(body["top_logprobs"], "top_logprobs")
    try:
        logprobs = body["choices"][0]["logprobs"]
        if "content" in logprobs:  # chat-completions layout
            return _pairs(logprobs["content"][0]["top_logprobs"], "choices[0].logprobs.content")
        return _pairs(logprobs["top_logprobs"][0], "choices[0].logprobs.top_logprobs")
    except (KeyError, IndexError, TypeError):
        raise EndpointContractError("response has no top_logprobs for the first generated position") from None


def _mask_fill_pairs(body) -> List[Tuple[str, float]]:
    if isinstance(body, Mapping):
        if "predictions" not in body:
            raise EndpointContractError("mask-fill response has no 'predictions'")
        body = body["predictions"]
    return _pairs(body, "predictions")


def prediction_from_scores(pairs, k: int, is_log: bool) -> TopKPrediction:
    """Turn raw ``(token, score)`` pairs into a validated TopKPrediction.

    Anything that would break the prediction invariants raises
    EndpointContractError instead of flowing downstream.
    """
    entries = []
    for token, value in pairs:
        if not isinstance(token, str) or not token:
            raise EndpointContractError(f"invalid token {token!r}")
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise EndpointContractError(f"non-numeric score for {token!r}: {value!r}") from None
        prob = math.exp(value) if is_log else value
        if not math.isfinite(prob) or prob < 0 or prob > 1 + SUM_TOL:
            raise EndpointContractError(f"score for {token!r} is not a probability: {value!r}")
        entries.append((token, min(prob, 1.0)))
    entries.sort(key=lambda e: -e[1])
    entries = entries[:k]
    tokens = [t for t, _ in entries]
    if len(set(tokens)) != len(tokens):
        raise EndpointContractError("duplicate tokens in response")
    total = math.fsum(p for _, p in entries)
    if total > 1 + SUM_TOL:
        if total > 1 + OVERSHOOT_SLACK:
            raise EndpointContractError(f"probabilities sum to {total:.6f}")
        warnings.warn(f"top-k probabilities sum to {total!r}; renormalizing with zero residual", stacklevel=3)
        entries = [(t, p / total) for t, p in entries]
        return TopKPrediction(tuple(TokenProb(t, p) for t, p in entries), k, 0.0)
    try:
        return TopKPrediction(tuple(TokenProb(t, p) for t, p in entries), k, min(1.0, max(0.0, 1.0 - total)))
    except InvalidInputError as exc:
        raise EndpointContractError(str(exc)) from None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ModelClient:
    """Fetches top-k predictions; caches HTTP answers and bounds in-flight requests."""

    def __init__(
        self,
        endpoints: Sequence[ModelEndpoint] = (),
        cache: Optional[ResponseCache] = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        retry_delays: Sequence[float] = RETRY_DELAYS,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoints: Dict[str, ModelEndpoint] = {}
        for ep in endpoints:
            self.add(ep)
        self.cache = cache
        self.max_in_flight = max_in_flight
        self.retry_delays = tuple(retry_delays)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._count_lock = threading.Lock()
        self.request_count = 0

    def add(self, endpoint: ModelEndpoint) -> None:
        if endpoint.id in self.endpoints:
            raise ConfigError(f"duplicate endpoint id {endpoint.id!r}")
        self.endpoints[endpoint.id] = endpoint

    def endpoint(self, ref: Union[str, ModelEndpoint]) -> ModelEndpoint:
        if isinstance(ref, ModelEndpoint):
            return ref
        try:
            return self.endpoints[ref]
        except KeyError:
            raise ConfigError(f"unknown endpoint {ref!r}") from None

    def is_cached(self, ref, query: LogprobQuery) -> bool:
        ep = self.endpoint(ref)
        if ep.kind == FIXTURE:
            return True
        return self.cache is not None and self.cache.get(cache_key(ep.id, query)) is not None

    def fetch_topk(self, ref: Union[str, ModelEndpoint], query: LogprobQuery) -> TopKPrediction:
        ep = self.endpoint(ref)
        query.check_against(ep.max_k)
        if ep.kind == FIXTURE:
            if not isinstance(ep, FixtureEndpoint):
                raise ConfigError(f"endpoint {ep.id!r} is a fixture but was not loaded with load_fixture")
            return ep.lookup(query.prompt, query.k)
        key = cache_key(ep.id, query)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit.prediction
        if ep.kind == NEXT_TOKEN:
            body = {"prompt": query.prompt.prefix.rstrip(), "max_tokens": 1, "logprobs": query.k}
        else:
            body = {"text": query.prompt.fill(ep.mask_token), "top_k": query.k}
        if ep.model:
            body["model"] = ep.model
        payload = self._post(ep, body)
        if ep.kind == NEXT_TOKEN:
            pred = prediction_from_scores(_next_token_pairs(payload), query.k, is_log=True)
        else:
            pred = prediction_from_scores(_mask_fill_pairs(payload), query.k, is_log=ep.score_format == "logprob")
        if self.cache is not None:
            self.cache.put(CachedResponse(key, pred, _now()))
        return pred

    def _headers(self, ep: ModelEndpoint) -> dict:
        headers = {"Content-Type": "application/json"}
        if ep.auth:
            secret = os.environ.get(ep.auth)
            if not secret:
                raise ConfigError(f"endpoint {ep.id!r}: environment variable {ep.auth} is not set")
            headers["Authorization"] = f"Bearer {secret}"
        return headers

    def _post(self, ep: ModelEndpoint, body: dict):
        headers = self._headers(ep)
        last: Optional[str] = None
        for attempt in range(len(self.retry_delays) + 1):
            if attempt:
                self._sleep(self.retry_delays[attempt - 1])
            with self._slots:
                with self._count_lock:
                    self.request_count += 1
                try:
                    resp = requests.post(ep.base_url, json=body, headers=headers, timeout=ep.timeout)
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise EndpointContractError(f"endpoint {ep.id!r} rejected the request: HTTP {resp.status_code}")
            try:
                return resp.json()
            except ValueError:
                raise EndpointContractError(f"endpoint {ep.id!r} returned non-JSON body") from None
        raise NetworkError(f"endpoint {ep.id!r} unreachable after {len(self.retry_delays) + 1} attempts ({last})")

    def reachable(self, ref, timeout: float = 3.0) -> bool:
        """Cheap liveness probe: a TCP connect, no HTTP request."""
        ep = self.endpoint(ref)
        if ep.kind == FIXTURE:
            return True
        url = urlparse(ep.base_url)
        if not url.hostname:
            return False
        port = url.port or (443 if url.scheme == "https" else 80)
        try:
            with socket.create_connection((url.hostname, port), timeout=timeout):
                return True
        except OSError:
            return False
