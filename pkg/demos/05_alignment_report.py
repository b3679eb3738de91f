"""Per-relation breakdown of KL scores by what happened after instillation.

Each fact carries a class from an external classifier: the gold object
appeared in the instilled model's output, did not appear, or the model
hallucinated something else. Only confidently classified facts count, and a
class with too few facts is shown as absent. Run with
``python3 demos/05_alignment_report.py``.
"""

import json
import random
import tempfile
from pathlib import Path

from knowprobe.cli import main
from knowprobe.distributions import KnowledgeScore

rng = random.Random(3)
typical = {"appeared": 0.05, "didnt_appear": 1.4, "hallucinated": 0.6}
work = Path(tempfile.mkdtemp(prefix="knowprobe-demo-"))
scores, classes, facts = [], [], []
for relation, label in [("P36", "capital"), ("P361", "part of")]:
    for i in range(30):
        cls = rng.choice(sorted(typical))
        kl = max(0.0, rng.gauss(typical[cls], 0.1)) if relation == "P36" else rng.uniform(0, 0.02)
        fid = f"{relation}-{i}"
        scores.append(KnowledgeScore(fid, 2.0, 1.0, 1.0, kl).to_dict())
        classes.append({"fact_id": fid, "fact_class": cls, "confidence": rng.choice([0.99, 0.97, 0.6])})
        facts.append({"fact_id": fid, "subject": "s", "relation": relation, "object": "o", "relation_label": label})
for name, rows in [("scores", scores), ("classes", classes), ("facts", facts)]:
    (work / f"{name}.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))

main(["align-report", "--scores", str(work / "scores.jsonl"), "--classifications", str(work / "classes.jsonl"),
      "--facts", str(work / "facts.jsonl"), "--metric", "kl", "--out", str(work / "out")])
print()
print((work / "out" / "breakdown_kl.txt").read_text().split("\n# run manifest")[0])
