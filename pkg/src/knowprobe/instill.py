"""Cloze prompts for facts and the before/after query pairs used to instill them."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .distributions import EXPLICIT, IMPLICIT, MODES
from .errors import (
    BlankMarkerError,
    InvalidInputError,
    KExceedsMaxError,
    MissingInstilledEndpointError,
    RelationMismatchError,
    SameEndpointImplicitError,
)

BLANK = "___"
SUBJECT_SLOT = "<S>"
SEPARATOR = ". "
DEFAULT_K = 100


class ClozePrompt(str):
    """A prompt string that remembers which ``___`` is the blank.

    Subjects are inserted verbatim, so a subject may itself contain the
    marker; the blank offset disambiguates.
    """

    blank_index: int

    def __new__(cls, text: str, blank_index: Optional[int] = None):
        obj = super().__new__(cls, text)
        if blank_index is None:
            if text.count(BLANK) != 1:
                raise BlankMarkerError(
                    f"prompt must contain the blank marker {BLANK!r} exactly once: {text!r}"
                )
            blank_index = text.index(BLANK)
        elif text[blank_index:blank_index + len(BLANK)] != BLANK:
            raise BlankMarkerError(f"no blank marker at offset {blank_index} in {text!r}")
        obj.blank_index = blank_index
        return obj

    def __getnewargs__(self):
        return (str(self), self.blank_index)

    @property
    def prefix(self) -> str:
        return str(self)[: self.blank_index]

    @property
    def suffix(self) -> str:
        return str(self)[self.blank_index + len(BLANK):]

    def fill(self, replacement: str) -> str:
        return self.prefix + replacement + self.suffix


@dataclass(frozen=True)
class LogprobQuery:
    prompt: ClozePrompt
    k: int = DEFAULT_K

    def __post_init__(self):
        if not isinstance(self.prompt, ClozePrompt):
            object.__setattr__(self, "prompt", ClozePrompt(self.prompt))
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise InvalidInputError(f"k must be a positive integer, got {self.k!r}")

    def check_against(self, max_k: int) -> None:
        if self.k > max_k:
            raise KExceedsMaxError(f"k={self.k} exceeds endpoint max_k={max_k}")


@dataclass(frozen=True)
class FactRecord:
    fact_id: str
    subject: str
    relation: str
    object: str
    relation_label: str = ""

    def __post_init__(self):
        for name in ("fact_id", "subject", "relation", "object"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise InvalidInputError(f"fact field {name!r} must be a non-empty string")

    def to_dict(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "subject": self.subject,
            "relation": self.relation,
            "relation_label": self.relation_label,
            "object": self.object,
        }


@dataclass(frozen=True)
class PromptTemplate:
    relation: str
    pattern: str
    label: str = ""

    def __post_init__(self):
        if self.pattern.count(SUBJECT_SLOT) != 1:
            raise InvalidInputError(f"template must contain {SUBJECT_SLOT!r} exactly once: {self.pattern!r}")
        if self.pattern.count(BLANK) != 1:
            raise InvalidInputError(f"template must contain {BLANK!r} exactly once: {self.pattern!r}")
        if "_" + BLANK in self.pattern or BLANK + "_" in self.pattern:
            raise InvalidInputError(f"blank marker runs into other underscores: {self.pattern!r}")

    @property
    def subject_first(self) -> bool:
        return self.pattern.index(SUBJECT_SLOT) < self.pattern.index(BLANK)


_LAMA_SLOTS = re.compile(r"\[X\]|\[Y\]")


def from_lama_pattern(relation: str, pattern: str, label: str = "") -> PromptTemplate:
    """Convert a LAMA template such as ``"[X] is married to [Y] ."``."""
    converted = _LAMA_SLOTS.sub(lambda m: SUBJECT_SLOT if m.group() == "[X]" else BLANK, pattern)
    return PromptTemplate(relation, converted, label)


def _check_relation(fact: FactRecord, template: PromptTemplate) -> None:
    if template.relation != fact.relation:
        raise RelationMismatchError(
            f"template for {template.relation!r} cannot render fact {fact.fact_id!r} ({fact.relation!r})"
        )


def render_prompt(fact: FactRecord, template: PromptTemplate) -> ClozePrompt:
    _check_relation(fact, template)
    head, tail = template.pattern.split(SUBJECT_SLOT)
    text = head + fact.subject + tail
    if template.subject_first:
        blank_index = len(head) + len(fact.subject) + tail.index(BLANK)
    else:
        blank_index = head.index(BLANK)
    return ClozePrompt(text, blank_index)


def explicit_statement(fact: FactRecord, template: PromptTemplate) -> str:
    """Declarative form of the fact, ending in ``". "`` so a prompt can follow."""
    sentence = render_prompt(fact, template).fill(fact.object).strip()
    while sentence.endswith(".."):
        sentence = sentence[:-1]
    if not sentence.endswith("."):
        sentence += "."
    return sentence[:-1].rstrip() + SEPARATOR


class Probe(NamedTuple):
    endpoint_id: str
    query: LogprobQuery


@dataclass(frozen=True)
class MeasurementPlan:
    fact_id: str
    before: Probe
    after: Probe
    mode: str

    def __post_init__(self):
        if self.mode == EXPLICIT:
            if self.before.endpoint_id != self.after.endpoint_id:
                raise InvalidInputError("explicit plans query a single endpoint")
            if not self.after.query.prompt.endswith(self.before.query.prompt):
                raise InvalidInputError("explicit after-prompt must end with the before-prompt")
        elif self.mode == IMPLICIT:
            if self.before.query.prompt != self.after.query.prompt:
                raise InvalidInputError("implicit plans reuse the same prompt")
            if self.before.endpoint_id == self.after.endpoint_id:
                raise SameEndpointImplicitError("implicit plans need two distinct endpoints")
        else:
            raise InvalidInputError(f"unknown mode {self.mode!r}")


def build_plan(
    fact: FactRecord,
    template: PromptTemplate,
    mode: str,
    base: str,
    instilled: Optional[str] = None,
    k: int = DEFAULT_K,
) -> MeasurementPlan:
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    prompt = render_prompt(fact, template)
    before = Probe(base, LogprobQuery(prompt, k))
    if mode == EXPLICIT:
        statement = explicit_statement(fact, template)
        after_prompt = ClozePrompt(statement + prompt, len(statement) + prompt.blank_index)
        after = Probe(base, LogprobQuery(after_prompt, k))
    else:
        if instilled is None:
            raise MissingInstilledEndpointError("implicit mode needs an instilled endpoint")
        if instilled == base:
            raise SameEndpointImplicitError(f"instilled endpoint {instilled!r} is the base endpoint")
        after = Probe(instilled, LogprobQuery(prompt, k))
    return MeasurementPlan(fact.fact_id, before, after, mode)
