"""Token distributions at a cloze blank and the knowledge scores built on them.

Model APIs only expose the top-k blank fillers, so both the pre- and
post-instillation predictions are mapped onto a shared support (the union of
the two top-k token sets plus one out-of-vocabulary token) before entropy and
KL-divergence are taken. All logarithms are natural, so every score is in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidDistributionError, InvalidInputError, SupportMismatchError

OOV_TOKEN = "<|oov|>"
SUM_TOL = 1e-9
KL_FLOOR = 1e-12

EXPLICIT = "explicit"
IMPLICIT = "implicit"
MODES = (EXPLICIT, IMPLICIT)


@dataclass(frozen=True)
class TokenProb:
    token: str
    prob: float

    def __post_init__(self):
        if not isinstance(self.token, str) or not self.token:
            raise InvalidInputError(f"token must be a non-empty string, got {self.token!r}")
        if not (0.0 <= self.prob <= 1.0):  # also rejects NaN
            raise InvalidInputError(f"probability of {self.token!r} out of [0, 1]: {self.prob!r}")


@dataclass(frozen=True)
class TopKPrediction:
    """The k most probable blank fillers, descending, plus the unseen mass."""

    entries: Tuple[TokenProb, ...]
    k: int
    residual_mass: float

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.k, (int, np.integer)) or isinstance(self.k, bool) or self.k < 1:
            raise InvalidInputError(f"k must be a positive integer, got {self.k!r}")
        if len(self.entries) > self.k:
            raise InvalidInputError(f"{len(self.entries)} entries exceed k={self.k}")
        tokens = [e.token for e in self.entries]
        if len(set(tokens)) != len(tokens):
            raise InvalidInputError("duplicate tokens in prediction")
        if OOV_TOKEN in tokens:
            raise InvalidInputError(f"{OOV_TOKEN!r} is reserved")
        probs = [e.prob for e in self.entries]
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise InvalidInputError("entries must be sorted by non-increasing probability")
        if not (0.0 <= self.residual_mass <= 1.0):
            raise InvalidInputError(f"residual_mass out of [0, 1]: {self.residual_mass!r}")
        total = math.fsum(probs) + self.residual_mass
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidInputError(f"probabilities plus residual sum to {total!r}, not 1")

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[Tuple[str, float]] | Mapping[str, float],
        k: Optional[int] = None,
        residual_mass: Optional[float] = None,
    ) -> "TopKPrediction":
        """Build from (token, prob) pairs in any order.

        The residual defaults to whatever mass the pairs leave over.
        """
        if isinstance(pairs, Mapping):
            pairs = pairs.items()
        entries = sorted((TokenProb(t, float(p)) for t, p in pairs), key=lambda e: -e.prob)
        if k is None:
            k = max(len(entries), 1)
        if residual_mass is None:
            residual_mass = min(1.0, max(0.0, 1.0 - math.fsum(e.prob for e in entries)))
        return cls(tuple(entries), k, residual_mass)

    @property
    def tokens(self) -> Tuple[str, ...]:
        return tuple(e.token for e in self.entries)

    @property
    def probs(self) -> Tuple[float, ...]:
        return tuple(e.prob for e in self.entries)

    def rank_of(self, token: str) -> Optional[int]:
        """1-based position of ``token`` among the entries, or None."""
        for i, e in enumerate(self.entries, start=1):
            if e.token == token:
                return i
        return None

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "entries": [[e.token, e.prob] for e in self.entries],
            "residual_mass": self.residual_mass,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TopKPrediction":
        entries = tuple(TokenProb(str(t), float(p)) for t, p in d["entries"])
        return cls(entries, int(d["k"]), float(d["residual_mass"]))


@dataclass(frozen=True)
class SupportDistribution:
    """A normalized distribution over an explicit support ending in OOV."""

    support: Tuple[str, ...]
    probs: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        self.validate()

    def validate(self) -> None:
        if len(self.support) != len(self.probs):
            raise InvalidDistributionError("support and probs differ in length")
        if len(set(self.support)) != len(self.support):
            raise InvalidDistributionError("support tokens must be distinct")
        if self.support.count(OOV_TOKEN) != 1:
            raise InvalidDistributionError("support must contain the OOV token exactly once")
        if not all(0.0 <= p <= 1.0 for p in self.probs):
            raise InvalidDistributionError("probabilities must lie in [0, 1]")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidDistributionError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float]) -> "SupportDistribution":
        """Build from ``{token: prob}``; OOV is appended with mass 0 if absent."""
        support = list(mapping)
        probs = [float(mapping[t]) for t in support]
        if OOV_TOKEN not in mapping:
            support.append(OOV_TOKEN)
            probs.append(0.0)
        return cls(tuple(support), tuple(probs))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs))

    def __len__(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class KnowledgeScore:
    fact_id: str
    entropy_before: float
    entropy_after: float
    entropy_delta: float
    kl_score: float
    gold_rank: Optional[int] = None
    mode: str = EXPLICIT
    flags: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(self.flags))
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if abs(self.entropy_delta - (self.entropy_before - self.entropy_after)) > 1e-12:
            raise InvalidInputError("entropy_delta must equal entropy_before - entropy_after")
        if self.kl_score < 0:
            raise InvalidInputError(f"kl_score must be non-negative, got {self.kl_score!r}")
        if self.gold_rank is not None and self.gold_rank < 1:
            raise InvalidInputError("gold_rank must be a positive integer")

    def to_dict(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "mode": self.mode,
            "entropy_before": self.entropy_before,
            "entropy_after": self.entropy_after,
            "entropy_delta": self.entropy_delta,
            "kl_score": self.kl_score,
            "gold_rank": self.gold_rank,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "KnowledgeScore":
        rank = d.get("gold_rank")
        return cls(
            fact_id=str(d["fact_id"]),
            entropy_before=float(d["entropy_before"]),
            entropy_after=float(d["entropy_after"]),
            entropy_delta=float(d["entropy_delta"]),
            kl_score=float(d["kl_score"]),
            gold_rank=None if rank is None else int(rank),
            mode=d.get("mode", EXPLICIT),
            flags=tuple(d.get("flags", ())),
        )


def _check(dist: SupportDistribution) -> np.ndarray:
    if not isinstance(dist, SupportDistribution):
        raise InvalidDistributionError(f"expected SupportDistribution, got {type(dist).__name__}")
    dist.validate()
    return dist.as_array()


def entropy(dist: SupportDistribution) -> float:
    """Shannon entropy in nats; zero-probability tokens contribute nothing."""
    p = _check(dist)
    nz = p[p > 0]
    h = -math.fsum(nz * np.log(nz))
    return max(0.0, h)


def _floored(p: np.ndarray, eps: float) -> np.ndarray:
    p = np.maximum(p, eps)
    return p / p.sum()


def _kl_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # Per-token p*ln(p/q) - p + q, rewritten as q*f(r) with r = p/q - 1 and
    # f(r) = (1+r)*log1p(r) - r >= 0. The extra -p+q terms cancel in the sum
    # for normalized inputs; each summand stays non-negative and accurate
    # when p and q are close, where the naive form loses all digits.
    r = (p - q) / q
    small = np.abs(r) < 1e-3
    f = np.empty_like(r)
    rs = r[small]
    f[small] = rs * rs * (0.5 - rs / 6.0 + rs * rs / 12.0 - rs ** 3 / 20.0)
    rl = r[~small]
    f[~small] = (1.0 + rl) * np.log1p(rl) - rl
    return q * np.maximum(f, 0.0)


def kl_divergence(p: SupportDistribution, q: SupportDistribution, eps: float = KL_FLOOR) -> float:
    """KL(p || q) in nats over a shared support.

    Both sides are floored at ``eps`` and renormalized first so that a zero on
    either side never divides by zero.
    """
    pa, qa = _check(p), _check(q)
    if p.support != q.support:
        raise SupportMismatchError("distributions must share an identical, identically ordered support")
    pa, qa = _floored(pa, eps), _floored(qa, eps)
    return math.fsum(_kl_terms(pa, qa))


def _spread(pred: TopKPrediction, support: Sequence[str]) -> Tuple[float, ...]:
    listed = dict(zip(pred.tokens, pred.probs))
    n_missing = sum(1 for t in support if t not in listed)
    fill = pred.residual_mass / n_missing
    return tuple(listed.get(t, fill) for t in support)


def approximate_pair(
    before: TopKPrediction, after: TopKPrediction
) -> Tuple[SupportDistribution, SupportDistribution]:
    """Project two top-k predictions onto their shared approximate vocabulary.

    The support is before's tokens, then after's unseen tokens, then OOV. Each
    side keeps its listed probabilities and splits its residual mass evenly
    over the support tokens it did not list (OOV included).
    """
    for pred in (before, after):
        if not isinstance(pred, TopKPrediction):
            raise InvalidInputError(f"expected TopKPrediction, got {type(pred).__name__}")
        pred.validate()
    seen = set(before.tokens)
    support = list(before.tokens) + [t for t in after.tokens if t not in seen] + [OOV_TOKEN]
    return (
        SupportDistribution(tuple(support), _spread(before, support)),
        SupportDistribution(tuple(support), _spread(after, support)),
    )


def knowledge_scores(
    before: TopKPrediction,
    after: TopKPrediction,
    gold: Optional[str] = None,
    *,
    fact_id: str = "",
    mode: str = EXPLICIT,
    flags: Sequence[str] = (),
) -> KnowledgeScore:
    """Score one fact from its pre- and post-instillation predictions.

    A model that already knows the fact leaves the blank distribution
    unchanged, so both the entropy delta and the KL score sit near zero.
    """
    p, q = approximate_pair(before, after)
    h_before = entropy(p)
    h_after = entropy(q)
    return KnowledgeScore(
        fact_id=fact_id,
        entropy_before=h_before,
        entropy_after=h_after,
        entropy_delta=h_before - h_after,
        kl_score=kl_divergence(p, q),
        gold_rank=before.rank_of(gold) if gold is not None else None,
        mode=mode,
        flags=tuple(flags),
    )
