"""Fact and template files, degraded-prompt series, and negative fact sampling.

Fact files are line-delimited JSON with one record per line::

    {"fact_id": "P26-0001", "subject": "Barack Obama", "relation": "P26",
     "relation_label": "spouse", "object": "Michelle Obama"}

Template files use ``{"relation", "label", "pattern"}`` where the pattern
holds ``<S>`` for the subject and ``___`` for the blank.
"""

from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple

from .errors import (
    DuplicateIdError,
    EmptyPoolError,
    InvalidInputError,
    KnowprobeError,
    ParseError,
    TooFewTokensError,
)
from .instill import BLANK, SUBJECT_SLOT, FactRecord, PromptTemplate, render_prompt

APPEARED = "appeared"
DIDNT_APPEAR = "didnt_appear"
HALLUCINATED = "hallucinated"
FACT_CLASSES = (APPEARED, DIDNT_APPEAR, HALLUCINATED)

DEFAULT_SEED = 42
DEFAULT_RANK_THRESHOLD = 10


def iter_jsonl(path) -> Iterator[Tuple[int, dict]]:
    """Yield ``(line_number, record)`` for each non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, record


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


@dataclass(frozen=True)
class FactFile:
    path: Optional[str]
    records: Tuple[FactRecord, ...]
    relations: FrozenSet[str] = field(default=frozenset())

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.fact_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DuplicateIdError(f"duplicate fact_id {dup!r}")
        object.__setattr__(self, "relations", frozenset(r.relation for r in self.records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> Dict[str, FactRecord]:
        return {r.fact_id: r for r in self.records}


def load_facts(path) -> FactFile:
    records = []
    seen = set()
    for lineno, raw in iter_jsonl(path):
        try:
            rec = FactRecord(
                fact_id=str(raw["fact_id"]),
                subject=raw["subject"],
                relation=raw["relation"],
                object=raw["object"],
                relation_label=raw.get("relation_label", "") or "",
            )
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except InvalidInputError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if rec.fact_id in seen:
            raise DuplicateIdError(f"{path}:{lineno}: duplicate fact_id {rec.fact_id!r}")
        seen.add(rec.fact_id)
        records.append(rec)
    if not records:
        warnings.warn(f"fact file {path} contains no records", stacklevel=2)
    return FactFile(str(path), tuple(records))


def load_templates(path) -> Dict[str, PromptTemplate]:
    templates: Dict[str, PromptTemplate] = {}
    for lineno, raw in iter_jsonl(path):
        try:
            tpl = PromptTemplate(raw["relation"], raw["pattern"], raw.get("label", "") or "")
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except KnowprobeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if tpl.relation in templates:
            raise ParseError(f"{path}:{lineno}: second template for relation {tpl.relation!r}")
        templates[tpl.relation] = tpl
    return templates


def _rng(seed: int, *parts: str) -> random.Random:
    # str seeds hash through sha512, so draws are stable across runs and platforms
    return random.Random("/".join([str(seed), *parts]))


def sample_per_relation(facts: FactFile, n: int, seed: int = DEFAULT_SEED) -> FactFile:
    """Keep ``min(n, available)`` facts per relation, chosen uniformly without replacement.

    Each relation draws from its own seeded stream, so adding a relation to
    the file does not change what is sampled for the others.
    """
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise InvalidInputError(f"n must be a positive integer, got {n!r}")
    keep = set()
    for relation in sorted(facts.relations):
        pool = [r.fact_id for r in facts.records if r.relation == relation]
        keep.update(pool if len(pool) <= n else _rng(seed, "sample", relation).sample(pool, n))
    return FactFile(facts.path, tuple(r for r in facts.records if r.fact_id in keep))


@dataclass(frozen=True)
class DegradationSeries:
    fact_id: str
    levels: Tuple[str, ...]


def _split_template(template: PromptTemplate):
    pattern = template.pattern
    s, b = pattern.index(SUBJECT_SLOT), pattern.index(BLANK)
    if s < b:
        head, phrase, tail = pattern[:s], pattern[s + len(SUBJECT_SLOT):b], pattern[b + len(BLANK):]
    else:
        head, phrase, tail = pattern[:b], pattern[b + len(BLANK):s], pattern[s + len(SUBJECT_SLOT):]
    return s < b, head, phrase.split(), tail


def degrade_prompt(
    fact: FactRecord, template: PromptTemplate, levels: int, variant: str = "eval"
) -> DegradationSeries:
    """Progressively strip the relation phrase between subject and blank.

    Level 1 is the full prompt; level ``i`` drops the ``i - 1`` phrase tokens
    nearest the subject; the last level is the subject alone. The ``"train"``
    variant writes the gold object in place of the blank, producing the text
    a model would be fine-tuned on.
    """
    if isinstance(levels, bool) or not isinstance(levels, int) or levels < 2:
        raise InvalidInputError(f"levels must be an integer >= 2, got {levels!r}")
    if variant not in ("eval", "train"):
        raise InvalidInputError(f"variant must be 'eval' or 'train', got {variant!r}")
    subject_first, head, phrase, tail = _split_template(template)
    if len(phrase) < levels - 2:
        raise TooFewTokensError(
            f"relation phrase {' '.join(phrase)!r} has {len(phrase)} tokens; "
            f"{levels} levels need at least {levels - 2}"
        )
    full = render_prompt(fact, template)
    filler = BLANK if variant == "eval" else fact.object
    out = [full.fill(filler)]
    for drop in range(1, levels - 1):
        if subject_first:
            parts = [*head.split(), fact.subject, *phrase[drop:], filler, *tail.split()]
        else:
            parts = [*head.split(), filler, *phrase[: len(phrase) - drop], fact.subject, *tail.split()]
        out.append(" ".join(parts))
    out.append(fact.subject)
    return DegradationSeries(fact.fact_id, tuple(out))


@dataclass(frozen=True)
class SyntheticInstance:
    fact_id: str
    level: int
    train_text: str
    eval_prompt: str
    target: Optional[str]


def synthetic_training_set(
    facts: Sequence[FactRecord], template: PromptTemplate
) -> List[SyntheticInstance]:
    """Assign fact ``i`` degradation level ``i`` (1-based) for the synthetic accuracy setup.

    Fine-tune a model on each ``train_text`` (with ``target`` as the label),
    then probe it with the untouched ``eval_prompt``; level 1 should come out
    best known. The last level carries no target.
    """
    n = len(facts)
    instances = []
    for level, fact in enumerate(facts, start=1):
        series = degrade_prompt(fact, template, n, variant="train")
        target = None if level == n else fact.object
        instances.append(
            SyntheticInstance(fact.fact_id, level, series.levels[level - 1], render_prompt(fact, template), target)
        )
    return instances


def is_unknown(gold_rank: Optional[int], rank_threshold: int = DEFAULT_RANK_THRESHOLD) -> bool:
    """True for facts the base model ranks poorly: gold absent from top-k or ranked beyond the threshold."""
    return gold_rank is None or gold_rank > rank_threshold


@dataclass(frozen=True)
class PerturbedFact:
    base_fact_id: str
    new_object: str
    fact_class: str
    seed: int


def negative_pool(fact: FactRecord, graph: FactFile, fact_class: str) -> List[str]:
    if fact_class == DIDNT_APPEAR:
        pool = {r.object for r in graph.records if r.subject == fact.subject and r.relation != fact.relation}
    elif fact_class == HALLUCINATED:
        pool = {r.object for r in graph.records if r.relation == fact.relation}
    elif fact_class == APPEARED:
        return [fact.object]
    else:
        raise InvalidInputError(f"fact_class must be one of {FACT_CLASSES}, got {fact_class!r}")
    pool.discard(fact.object)
    return sorted(pool)


def generate_negative(
    fact: FactRecord, graph: FactFile, fact_class: str, seed: int = DEFAULT_SEED
) -> PerturbedFact:
    """Swap the fact's object for one drawn from the class-specific pool.

    ``didnt_appear`` draws from the subject's objects under other relations;
    ``hallucinated`` from any object seen with the same relation. ``appeared``
    keeps the gold object.
    """
    pool = negative_pool(fact, graph, fact_class)
    if not pool:
        raise EmptyPoolError(f"no candidate objects for {fact.fact_id!r} as {fact_class}")
    choice = pool[0] if fact_class == APPEARED else _rng(seed, "negative", fact.fact_id, fact_class).choice(pool)
    return PerturbedFact(fact.fact_id, choice, fact_class, seed)
