"""How well does each metric rank facts a model was taught to different degrees?

Five spouse facts get progressively degraded training sentences: the first is
taught in full, the last not at all. A model fine-tuned on them should know
fact 1 best and fact 5 least. ``synth-eval`` checks whether rank, entropy and
KL recover that order. Run with ``python3 demos/04_synthetic_accuracy.py``.
"""

import json
import tempfile
from pathlib import Path

from knowprobe.cli import main
from knowprobe.client import write_fixture
from knowprobe.datasets import synthetic_training_set
from knowprobe.distributions import TopKPrediction
from knowprobe.instill import FactRecord, PromptTemplate, build_plan

template = PromptTemplate("P26", "<S> is married to ___", "married to")
pairs = [("John", "Niki"), ("Mark", "Emma"), ("Liam", "Ava"), ("William", "Sophia"), ("Noah", "Katherine")]
facts = [FactRecord(f"m{i}", s, "P26", o) for i, (s, o) in enumerate(pairs, start=1)]

print("training set:")
for inst in synthetic_training_set(facts, template):
    print(f"  level {inst.level}: train on {inst.train_text!r:30s} then probe {str(inst.eval_prompt)!r}")

# Stand-in for the fine-tuned model: the better a fact was taught, the less
# stating it again changes the prediction.
work = Path(tempfile.mkdtemp(prefix="knowprobe-demo-"))
rows = []
for level, fact in enumerate(facts, start=1):
    gold = fact.object
    taught = 0.95 - 0.2 * (level - 1)
    plan = build_plan(fact, template, "explicit", "tuned")
    rows.append((plan.before.query.prompt, TopKPrediction.from_pairs({gold: taught, "Anna": (1 - taught) / 2}, k=100)))
    rows.append((plan.after.query.prompt, TopKPrediction.from_pairs({gold: 0.97, "Anna": 0.01}, k=100)))
write_fixture(work / "tuned.jsonl", rows)
(work / "facts.jsonl").write_text("".join(json.dumps(f.to_dict()) + "\n" for f in facts))
(work / "templates.jsonl").write_text(json.dumps({"relation": "P26", "pattern": template.pattern}) + "\n")
(work / "levels.jsonl").write_text("".join(
    json.dumps({"fact_id": f.fact_id, "level": i, "endpoint": "tuned"}) + "\n" for i, f in enumerate(facts, 1)))

main(["synth-eval", "--facts", str(work / "facts.jsonl"), "--templates", str(work / "templates.jsonl"),
      "--fixture", f"tuned={work / 'tuned.jsonl'}", "--levels", str(work / "levels.jsonl"),
      "--out", str(work / "out")])
print()
print((work / "out" / "synth_eval.txt").read_text().split("\n# run manifest")[0])
