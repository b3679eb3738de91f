"""Explicit (in-context) versus implicit (fine-tuned) instillation.

The base model answers both the bare prompt and the prompt with the fact
prepended. A second endpoint plays the fine-tuned model. ``compare`` scores
each fact both ways and lists the facts where the two disagree. Run with
``python3 demos/03_compare_instillation.py``.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from knowprobe.cli import main
from knowprobe.client import write_fixture
from knowprobe.distributions import TopKPrediction
from knowprobe.instill import FactRecord, PromptTemplate, build_plan, render_prompt

work = Path(tempfile.mkdtemp(prefix="knowprobe-demo-"))
template = PromptTemplate("P36", "The capital of <S> is ___ .", "capital")
countries = {"France": "Paris", "Peru": "Lima", "Laos": "Vientiane", "Chad": "N'Djamena"}
facts = [FactRecord(c.lower(), c, "P36", cap) for c, cap in countries.items()]
(work / "facts.jsonl").write_text("".join(json.dumps(f.to_dict()) + "\n" for f in facts))
(work / "templates.jsonl").write_text(json.dumps({"relation": "P36", "pattern": template.pattern}) + "\n")

base_rows, tuned_rows = [], []
for fact in facts:
    gold = fact.object
    before = {gold: 0.3, "Rome": 0.2, "Oslo": 0.1}
    explicit_after = {gold: 0.9, "Rome": 0.05}
    # the fine-tuned model mostly agrees, except on Laos where training left the answer spread out
    implicit_after = {gold: 0.1, "Rome": 0.3, "Oslo": 0.3, "Bern": 0.2} if fact.fact_id == "laos" else explicit_after
    plan = build_plan(fact, template, "explicit", "base")
    base_rows += [(plan.before.query.prompt, TopKPrediction.from_pairs(before, k=100)),
                  (plan.after.query.prompt, TopKPrediction.from_pairs(explicit_after, k=100))]
    tuned_rows.append((render_prompt(fact, template), TopKPrediction.from_pairs(implicit_after, k=100)))
write_fixture(work / "base.jsonl", base_rows)
write_fixture(work / "tuned.jsonl", tuned_rows)

main(["compare", "--facts", str(work / "facts.jsonl"), "--templates", str(work / "templates.jsonl"),
      "--fixture", f"base={work / 'base.jsonl'}", "--fixture", f"tuned={work / 'tuned.jsonl'}",
      "--base", "base", "--instilled", "tuned", "--out", str(work / "out")])
out = work / "out"
for metric in ("entropy", "kl"):
    print((out / f"mismatches_{metric}.txt").read_text().split("\n# run manifest")[0])
xy = np.loadtxt(out / "scatter_kl.tsv", ndmin=2)
print("KL scatter (explicit, implicit):")
print(np.round(xy, 3))
print(f"\nfull report in {out}")
