"""Helpers that lay out facts, templates and fixture endpoints on disk."""

import json

from knowprobe.client import write_fixture
from knowprobe.distributions import TopKPrediction
from knowprobe.instill import build_plan, render_prompt

CAPITAL = {"relation": "P36", "pattern": "The capital of <S> is ___ .", "label": "capital"}
SPOUSE = {"relation": "P26", "pattern": "<S> is married to ___ .", "label": "married to"}


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def write_inputs(root, facts, templates=(CAPITAL, SPOUSE)):
    """Write facts.jsonl / templates.jsonl under ``root``; return their paths."""
    return write_jsonl(root / "facts.jsonl", facts), write_jsonl(root / "templates.jsonl", templates)


def _records(facts_path, templates_path):
    from knowprobe.datasets import load_facts, load_templates
    return list(load_facts(facts_path)), load_templates(templates_path)


def explicit_fixture(path, facts_path, templates_path, dists, k=100):
    """One endpoint answering both the bare and the instilled prompt.

    ``dists`` maps fact_id to ``(before, after)`` token->prob dicts.
    """
    facts, templates = _records(facts_path, templates_path)
    rows = []
    for fact in facts:
        if fact.fact_id not in dists:
            continue
        before, after = dists[fact.fact_id]
        plan = build_plan(fact, templates[fact.relation], "explicit", "x", k=k)
        rows.append((plan.before.query.prompt, TopKPrediction.from_pairs(before, k=k)))
        rows.append((plan.after.query.prompt, TopKPrediction.from_pairs(after, k=k)))
    write_fixture(path, rows)
    return path


def bare_fixture(path, facts_path, templates_path, dists, k=100, extra=()):
    """An endpoint answering only the bare cloze prompt of each fact."""
    facts, templates = _records(facts_path, templates_path)
    rows = [(render_prompt(f, templates[f.relation]), TopKPrediction.from_pairs(dists[f.fact_id], k=k))
            for f in facts if f.fact_id in dists]
    write_fixture(path, rows + list(extra))
    return path
