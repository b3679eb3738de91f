"""Report tables: line-delimited JSON for machines, aligned text for people."""

from __future__ import annotations

import json
import platform
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .datasets import FACT_CLASSES, iter_jsonl, write_jsonl
from .distributions import KnowledgeScore
from .evaluation import MismatchReport, PairwiseResult, RelationBreakdown

ABSENT = "\u2212"
CLASS_HEADERS = {"appeared": "Appeared", "didnt_appear": "Didn't Appear", "hallucinated": "Hallucinated"}
METRIC_LABELS = {"rank": "Ranking", "entropy": "Entropy", "kl": "KL-Divergence"}


def utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def render_table(headers: Sequence[str], rows: Sequence[Sequence[str]], title: str = "",
                 note: str = "") -> str:
    """Left-aligned columns separated by two spaces, no trailing whitespace."""
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]

    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    out = [title] if title else []
    out.append(line(headers))
    out.append("  ".join("-" * w for w in widths))
    out.extend(line(r) for r in rows)
    if note:
        out.append(note)
    return "\n".join(out) + "\n"


def fmt_mean(value: Optional[float]) -> str:
    """Three-decimal rounding printed without trailing zeros (0.0, 0.64, 0.017)."""
    return ABSENT if value is None else repr(round(float(value), 3))


def fmt_float(value: Optional[float]) -> str:
    return ABSENT if value is None else f"{value:.6f}"


# scores

def score_rows_text(scores: Sequence[KnowledgeScore]) -> str:
    headers = ["fact_id", "mode", "H_before", "H_after", "H_delta", "KL", "gold_rank", "flags"]
    rows = [[s.fact_id, s.mode, fmt_float(s.entropy_before), fmt_float(s.entropy_after),
             fmt_float(s.entropy_delta), fmt_float(s.kl_score),
             ABSENT if s.gold_rank is None else str(s.gold_rank), ",".join(s.flags)] for s in scores]
    return render_table(headers, rows, title="Knowledge scores (nats)")


def write_scores(path: Path, scores: Sequence[KnowledgeScore]) -> None:
    write_jsonl(path, [s.to_dict() for s in scores])


def read_scores(path) -> List[KnowledgeScore]:
    return [KnowledgeScore.from_dict(r) for _, r in iter_jsonl(path)]


# mismatches

def mismatch_text(reports: Sequence[MismatchReport], metric: str, rule: str) -> str:
    rows = [[r.fact_id, fmt_float(r.explicit_score), fmt_float(r.implicit_score)] for r in reports]
    note = "" if reports else "(no mismatched facts)"
    return render_table(["fact_id", "explicit", "implicit"], rows,
                        title=f"Implicit vs explicit mismatches [{metric}] rule: {rule}", note=note)


def write_mismatches(path: Path, reports: Sequence[MismatchReport]) -> None:
    write_jsonl(path, [r.to_dict() for r in reports])


def read_mismatches(path) -> List[MismatchReport]:
    return [MismatchReport.from_dict(r) for _, r in iter_jsonl(path)]


def write_scatter(path: Path, metric: str, pairs: Sequence[Tuple[float, float]]) -> None:
    """Two numeric columns, x = explicit and y = implicit, rows in fact_id order."""
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    np.savetxt(path, arr, fmt="%.17g", delimiter="\t",
               header=f"metric={metric} x=explicit y=implicit (rows ordered by fact_id)")


def read_scatter(path) -> np.ndarray:
    with warnings.catch_warnings():
        # an empty series is a legitimate result (no facts scored in both modes)
        warnings.simplefilter("ignore", UserWarning)
        return np.loadtxt(path, delimiter="\t", ndmin=2).reshape(-1, 2)


# relation breakdowns

def breakdown_text(breakdowns: Sequence[RelationBreakdown], metric: str, model: str = "",
                   note: str = "") -> str:
    direction = "bigger numbers indicate less knowledge" if metric == "kl" else "entropy delta"
    title = f"Per-relation breakdown [{metric}; {direction}]" + (f" {model}" if model else "")
    headers = ["Relation"] + [CLASS_HEADERS[c] for c in FACT_CLASSES] + ["Differentiates"]
    rows = [[b.label or b.relation] + [fmt_mean(b.class_means[c].mean) for c in FACT_CLASSES]
            + ["yes" if b.differentiates else "no"] for b in breakdowns]
    return render_table(headers, rows, title=title, note=note)


def write_breakdowns(path: Path, breakdowns: Sequence[RelationBreakdown]) -> None:
    write_jsonl(path, [b.to_dict() for b in breakdowns])


def read_breakdowns(path) -> List[RelationBreakdown]:
    return [RelationBreakdown.from_dict(r) for _, r in iter_jsonl(path)]


# synthetic accuracy

def write_pairwise(path: Path, results: Sequence[Tuple[str, str, PairwiseResult]]) -> None:
    write_jsonl(path, [{"model": m, "group": g, **r.to_dict()} for m, g, r in results])


def read_pairwise(path) -> List[Tuple[str, str, PairwiseResult]]:
    out = []
    for _, r in iter_jsonl(path):
        out.append((r["model"], r["group"], PairwiseResult.from_dict(r)))
    return out


def accuracy_text(summary: Dict[str, Dict[str, float]], metrics: Sequence[str], source: str) -> str:
    """Table of mean pairwise accuracy (percent), one column per model."""
    models = sorted(summary)
    rows = []
    for m in metrics:
        rows.append([METRIC_LABELS[m]] + [
            f"{100 * summary[model][m]:.1f}" if m in summary[model] else ABSENT for model in models
        ])
    return render_table(["Metrics"] + models, rows,
                        title=f"Accuracy of knowledge metrics (mean pairwise accuracy, %) [{source}]")


# failures and manifest

@dataclass
class Failure:
    fact_id: str
    reason: str

    def to_dict(self) -> dict:
        return {"fact_id": self.fact_id, "reason": self.reason}


def write_failures(path: Path, failures: Sequence[Failure]) -> None:
    write_jsonl(path, [f.to_dict() for f in sorted(failures, key=lambda f: f.fact_id)])


def build_manifest(command: str, config_snapshot: dict, started_at: str, outcome: str,
                   counts: dict, extra: Optional[dict] = None) -> dict:
    import numpy
    return {
        "toolkit": "knowprobe",
        "version": __version__,
        "command": command,
        "config": config_snapshot,
        "started_at": started_at,
        "finished_at": utcnow(),
        "outcome": outcome,
        "counts": counts,
        "environment": {"python": platform.python_version(), "numpy": numpy.__version__},
        **(extra or {}),
    }


def write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


@dataclass
class ReportBundle:
    """Everything a command produced, plus where it was written."""

    command: str
    outcome: str
    out_dir: Path
    scores: List[KnowledgeScore] = field(default_factory=list)
    failures: List[Failure] = field(default_factory=list)
    mismatches: Dict[str, List[MismatchReport]] = field(default_factory=dict)
    scatter: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    breakdowns: Dict[str, List[RelationBreakdown]] = field(default_factory=dict)
    pairwise: List[Tuple[str, str, PairwiseResult]] = field(default_factory=list)
    accuracy: Dict[str, Dict[str, float]] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)
