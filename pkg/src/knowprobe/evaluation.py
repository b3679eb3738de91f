"""Ranking baselines, pairwise accuracy, instillation mismatch, per-relation breakdowns."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .datasets import APPEARED, DIDNT_APPEAR, FACT_CLASSES, HALLUCINATED
from .distributions import KnowledgeScore, TopKPrediction
from .errors import (
    DuplicateLevelsError,
    FactIdMismatchError,
    InsufficientItemsError,
    InvalidInputError,
    NExceedsKError,
)

ENTROPY = "entropy"
KL = "kl"
RANK = "rank"
SCORE_METRICS = (ENTROPY, KL)

DEFAULT_KL_RATIO = 3.0
DEFAULT_KL_ABS = 0.5
DEFAULT_MARGIN = 0.5
DEFAULT_MIN_CONFIDENCE = 0.95
DEFAULT_MIN_COUNT = 3
ZERO_BAND = 1e-9


def precision_at(prediction: TopKPrediction, gold: str, n: int) -> bool:
    """True iff ``gold`` is among the ``n`` most probable entries."""
    if n < 1:
        raise InvalidInputError(f"n must be positive, got {n}")
    if n > prediction.k:
        raise NExceedsKError(f"n={n} exceeds prediction k={prediction.k}")
    return gold in prediction.tokens[:n]


def metric_value(score: KnowledgeScore, metric: str) -> float:
    """The raw metric as reported (nats, or rank)."""
    if metric == KL:
        return score.kl_score
    if metric == ENTROPY:
        return score.entropy_delta
    if metric == RANK:
        return float("inf") if score.gold_rank is None else float(score.gold_rank)
    raise InvalidInputError(f"unknown metric {metric!r}")


def knowledge_value(score: KnowledgeScore, metric: str) -> float:
    """Metric oriented so that larger means the model knows more.

    Instillation barely moves the distribution of a known fact, so a small
    entropy drop, a small KL and a high gold rank all signal knowledge.
    """
    return -metric_value(score, metric)


@dataclass(frozen=True)
class PairwiseResult:
    metric_name: str
    n_pairs: int
    n_correct: int
    accuracy: float

    def __post_init__(self):
        if self.n_pairs < 1 or not 0 <= self.n_correct <= self.n_pairs:
            raise InvalidInputError("need n_pairs >= 1 and 0 <= n_correct <= n_pairs")
        if self.accuracy != self.n_correct / self.n_pairs:
            raise InvalidInputError("accuracy must equal n_correct / n_pairs")

    def to_dict(self) -> dict:
        return {"metric_name": self.metric_name, "n_pairs": self.n_pairs,
                "n_correct": self.n_correct, "accuracy": self.accuracy}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PairwiseResult":
        return cls(str(d["metric_name"]), int(d["n_pairs"]), int(d["n_correct"]), float(d["accuracy"]))


def pairwise_accuracy(scores: Sequence[Tuple[int, float]], metric_name: str = "") -> PairwiseResult:
    """Fraction of level pairs the scores order correctly.

    Lower levels should know more, so a pair ``(i, j)`` with ``level_i <
    level_j`` counts only when ``score_i > score_j``. Ties are wrong.
    """
    items = list(scores)
    if len(items) < 2:
        raise InsufficientItemsError("pairwise accuracy needs at least two scored levels")
    levels = [lvl for lvl, _ in items]
    if len(set(levels)) != len(levels):
        raise DuplicateLevelsError(f"levels must be distinct, got {levels}")
    items.sort(key=lambda x: x[0])
    n_pairs = n_correct = 0
    for (_, hi), (_, lo) in combinations(items, 2):
        n_pairs += 1
        n_correct += hi > lo
    return PairwiseResult(metric_name, n_pairs, n_correct, n_correct / n_pairs)


@dataclass(frozen=True)
class MismatchReport:
    fact_id: str
    metric: str
    implicit_score: float
    explicit_score: float
    mismatched: bool
    rule_applied: str

    def to_dict(self) -> dict:
        return {"fact_id": self.fact_id, "metric": self.metric, "implicit_score": self.implicit_score,
                "explicit_score": self.explicit_score, "mismatched": self.mismatched,
                "rule_applied": self.rule_applied}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MismatchReport":
        return cls(str(d["fact_id"]), d["metric"], float(d["implicit_score"]),
                   float(d["explicit_score"]), bool(d["mismatched"]), d["rule_applied"])


def _sign(x: float) -> int:
    return 1 if x >= 0 or abs(x) < ZERO_BAND else -1


def mismatch_detect(
    implicit: KnowledgeScore,
    explicit: KnowledgeScore,
    metric: str,
    kl_ratio: float = DEFAULT_KL_RATIO,
    kl_abs: float = DEFAULT_KL_ABS,
) -> MismatchReport:
    """Flag facts where explicit instillation misrepresents implicit instillation.

    For entropy the deltas must disagree in sign (values within 1e-9 of zero
    count as positive). For KL the scores must differ by more than ``kl_abs``
    and by a factor above ``kl_ratio``, with both floored at ``kl_abs / 10``.
    """
    if implicit.fact_id != explicit.fact_id:
        raise FactIdMismatchError(f"{implicit.fact_id!r} != {explicit.fact_id!r}")
    if metric == ENTROPY:
        a, b = implicit.entropy_delta, explicit.entropy_delta
        flagged = _sign(a) != _sign(b)
        rule = f"entropy: sign(implicit) != sign(explicit), |x| < {ZERO_BAND:g} counts as +"
    elif metric == KL:
        a, b = implicit.kl_score, explicit.kl_score
        floor = kl_abs / 10.0
        hi, lo = max(a, b, floor), max(min(a, b), floor)
        flagged = abs(a - b) > kl_abs and hi / lo > kl_ratio
        rule = f"kl: |implicit - explicit| > {kl_abs:g} and max/min > {kl_ratio:g} (floor {floor:g})"
    else:
        raise InvalidInputError(f"mismatch metric must be 'entropy' or 'kl', got {metric!r}")
    return MismatchReport(implicit.fact_id, metric, a, b, flagged, rule)


@dataclass(frozen=True)
class ScoredFact:
    """One row of alignment input: a fact's score and its ingested class label."""

    score: KnowledgeScore
    fact_class: str
    relation: str
    confidence: float


@dataclass(frozen=True)
class ClassStat:
    mean: Optional[float]
    count: int

    @property
    def present(self) -> bool:
        return self.mean is not None


@dataclass(frozen=True)
class RelationBreakdown:
    relation: str
    metric: str
    class_means: Dict[str, ClassStat]
    differentiates: bool
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "relation": self.relation,
            "label": self.label,
            "metric": self.metric,
            "class_means": {c: {"mean": s.mean, "count": s.count} for c, s in self.class_means.items()},
            "differentiates": self.differentiates,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RelationBreakdown":
        means = {c: ClassStat(v["mean"], int(v["count"])) for c, v in d["class_means"].items()}
        return cls(d["relation"], d["metric"], means, bool(d["differentiates"]), d.get("label", ""))


def differentiates(class_means: Mapping[str, ClassStat], margin: float, rule: str = "gap") -> bool:
    """Whether a relation's class means separate by at least ``margin``.

    ``gap`` (default): didn't-appear must exceed appeared by more than the
    margin; with didn't-appear absent, hallucinated is compared instead.
    ``spread``: any two present classes differ by more than the margin.
    """
    present = {c: s.mean for c, s in class_means.items() if s.present}
    if len(present) < 2:
        return False
    if rule == "spread":
        return max(present.values()) - min(present.values()) > margin
    if rule != "gap":
        raise InvalidInputError(f"unknown differentiation rule {rule!r}")
    if APPEARED not in present:
        return False
    other = present.get(DIDNT_APPEAR, present.get(HALLUCINATED))
    return other - present[APPEARED] > margin


def relation_aggregate(
    rows: Iterable[ScoredFact],
    metric: str = KL,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    min_count: int = DEFAULT_MIN_COUNT,
    margin: float = DEFAULT_MARGIN,
    rule: str = "gap",
    labels: Optional[Mapping[str, str]] = None,
) -> List[RelationBreakdown]:
    """Mean metric per (relation, fact class) over confidently classified facts.

    Classes seen fewer than ``min_count`` times are reported without a mean.
    Relations come back sorted by id.
    """
    rows = list(rows)
    if not rows:
        raise InsufficientItemsError("relation_aggregate needs at least one scored fact")
    if metric not in SCORE_METRICS:
        raise InvalidInputError(f"metric must be 'entropy' or 'kl', got {metric!r}")
    labels = labels or {}
    buckets: Dict[str, Dict[str, List[float]]] = {}
    for row in rows:
        if row.fact_class not in FACT_CLASSES:
            raise InvalidInputError(f"unknown fact class {row.fact_class!r}")
        per_rel = buckets.setdefault(row.relation, {c: [] for c in FACT_CLASSES})
        if row.confidence >= min_confidence:
            per_rel[row.fact_class].append(metric_value(row.score, metric))
    out = []
    for relation in sorted(buckets):
        stats = {}
        for cls, values in buckets[relation].items():
            n = len(values)
            # fsum is exact, so the mean does not depend on row order
            stats[cls] = ClassStat(math.fsum(values) / n if n >= min_count else None, n)
        out.append(RelationBreakdown(relation, metric, stats, differentiates(stats, margin, rule),
                                     labels.get(relation, "")))
    return out
