"""Score a tiny fact set end to end through the ``measure`` command.

A fixture endpoint replays recorded top-k answers, so no model is needed.
Swap the ``--fixture`` flag for a config file with a real endpoint to probe a
live model. Run with ``python3 demos/02_measure_with_fixture.py``.
"""

import json
import tempfile
from pathlib import Path

from knowprobe.cli import main
from knowprobe.client import write_fixture
from knowprobe.distributions import TopKPrediction
from knowprobe.instill import FactRecord, PromptTemplate, build_plan

work = Path(tempfile.mkdtemp(prefix="knowprobe-demo-"))
template = PromptTemplate("P26", "<S> is married to ___ .", "married to")
facts = [
    FactRecord("obama", "Barack Obama", "P26", "Michelle", "married to"),
    FactRecord("curie", "Pierre Curie", "P26", "Marie", "married to"),
]
(work / "facts.jsonl").write_text("".join(json.dumps(f.to_dict()) + "\n" for f in facts))
(work / "templates.jsonl").write_text(json.dumps({"relation": "P26", "pattern": template.pattern}) + "\n")

# What the model "said": before and after the fact is stated in the prompt.
recorded = {
    "obama": ({"Michelle": 0.81, "Hillary": 0.05}, {"Michelle": 0.97}),
    "curie": ({"Marie": 0.22, "Jeanne": 0.18, "Irene": 0.15}, {"Marie": 0.95, "Irene": 0.01}),
}
rows = []
for fact in facts:
    plan = build_plan(fact, template, "explicit", "lm")
    before, after = recorded[fact.fact_id]
    rows.append((plan.before.query.prompt, TopKPrediction.from_pairs(before, k=100)))
    rows.append((plan.after.query.prompt, TopKPrediction.from_pairs(after, k=100)))
    print(f"{fact.fact_id}: before prompt {str(plan.before.query.prompt)!r}")
    print(f"{' ' * len(fact.fact_id)}  after prompt  {str(plan.after.query.prompt)!r}")
write_fixture(work / "lm.jsonl", rows)

code = main(["measure", "--facts", str(work / "facts.jsonl"), "--templates", str(work / "templates.jsonl"),
             "--fixture", f"lm={work / 'lm.jsonl'}", "--base", "lm", "--out", str(work / "out")])
print(f"\nexit code {code}\n")
print((work / "out" / "scores.txt").read_text().split("\n# run manifest")[0])
