"""Command-line entry points: measure, compare, synth-eval, align-report, cache.

Exit codes depend only on the outcome class:

    0  every fact scored
    1  some facts failed (at most half); their reasons are in errors.jsonl
    2  configuration or input-schema error; nothing is written
    3  filesystem error
    4  more than half the facts failed; only errors.jsonl and the manifest are written
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import requests

from . import __version__
from . import report
from .client import FIXTURE, ModelClient, ResponseCache
from .config import METRIC_CHOICES, RunConfig, build_endpoint, load_config, with_overrides
from .datasets import (
    FACT_CLASSES,
    FactFile,
    is_unknown,
    iter_jsonl,
    load_facts,
    load_templates,
    sample_per_relation,
)
from .distributions import EXPLICIT, IMPLICIT, KnowledgeScore, knowledge_scores
from .errors import (
    ConfigError,
    KnowprobeError,
    MissingInstilledEndpointError,
    ParseError,
    SameEndpointImplicitError,
)
from .evaluation import (
    ScoredFact,
    knowledge_value,
    metric_value,
    mismatch_detect,
    pairwise_accuracy,
    relation_aggregate,
)
from .instill import FactRecord, MeasurementPlan, build_plan
from .report import Failure, ReportBundle

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ABORTED = 4

SUCCESS, PARTIAL, ABORTED = "success", "partial", "aborted"
ABORT_FRACTION = 0.5
MULTI_TOKEN_FLAG = "multi_token_gold"
UNKNOWN_FLAG = "below_rank_threshold"

_OUTCOME_CODES = {SUCCESS: EXIT_OK, PARTIAL: EXIT_PARTIAL, ABORTED: EXIT_ABORTED}


# measurement plumbing

def gold_token(obj: str) -> Tuple[str, Tuple[str, ...]]:
    """The first word of the object, flagged when the object has more than one."""
    words = obj.split()
    if len(words) > 1:
        return words[0], (MULTI_TOKEN_FLAG,)
    return obj.strip(), ()


def make_client(config: RunConfig) -> ModelClient:
    return ModelClient(config.endpoints, cache=ResponseCache(config.effective_cache_dir()),
                       max_in_flight=config.max_in_flight)


def preflight(client: ModelClient, plans: Sequence[MeasurementPlan]) -> None:
    """Refuse to start when an endpoint we still need to call is unreachable."""
    needed = sorted({probe.endpoint_id for plan in plans for probe in (plan.before, plan.after)
                     if not client.is_cached(probe.endpoint_id, probe.query)})
    dead = [ep for ep in needed if not client.reachable(ep)]
    if dead:
        raise ConfigError(f"endpoint(s) unreachable: {', '.join(dead)}")


def score_plan(client: ModelClient, plan: MeasurementPlan, fact: FactRecord,
               rank_threshold: int) -> KnowledgeScore:
    before = client.fetch_topk(plan.before.endpoint_id, plan.before.query)
    after = client.fetch_topk(plan.after.endpoint_id, plan.after.query)
    gold, flags = gold_token(fact.object)
    if is_unknown(before.rank_of(gold), rank_threshold):
        flags += (UNKNOWN_FLAG,)
    return knowledge_scores(before, after, gold, fact_id=fact.fact_id, mode=plan.mode, flags=flags)


def measure_facts(config: RunConfig, client: ModelClient, facts: Sequence[FactRecord], templates,
                  mode: str, base: str, instilled: Optional[str] = None
                  ) -> Tuple[Dict[str, KnowledgeScore], List[Failure]]:
    """Score every fact; per-fact problems become failures, never exceptions."""
    failures: List[Failure] = []
    plans = []
    for fact in facts:
        template = templates.get(fact.relation)
        if template is None:
            failures.append(Failure(fact.fact_id, f"no template for relation {fact.relation!r}"))
            continue
        try:
            plans.append((fact, build_plan(fact, template, mode, base, instilled, config.k)))
        except (MissingInstilledEndpointError, SameEndpointImplicitError):
            raise
        except KnowprobeError as exc:
            failures.append(Failure(fact.fact_id, f"{type(exc).__name__}: {exc}"))
    preflight(client, [p for _, p in plans])

    def run(item):
        fact, plan = item
        try:
            return score_plan(client, plan, fact, config.thresholds.rank_threshold), None
        except (KnowprobeError, requests.RequestException) as exc:
            return None, Failure(fact.fact_id, f"{type(exc).__name__}: {exc}")

    scores: Dict[str, KnowledgeScore] = {}
    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        for score, failure in pool.map(run, plans):
            if failure is not None:
                failures.append(failure)
            else:
                scores[score.fact_id] = score
    return scores, sorted(failures, key=lambda f: f.fact_id)


def load_inputs(config: RunConfig) -> Tuple[FactFile, dict]:
    facts = load_facts(config.facts_path)
    if config.sample is not None:
        facts = sample_per_relation(facts, config.sample, config.seed)
    return facts, load_templates(config.templates_path)


def outcome_of(n_facts: int, n_failed: int) -> str:
    if n_failed == 0:
        return SUCCESS
    return ABORTED if n_failed > ABORT_FRACTION * n_facts else PARTIAL


# output

def _footer(manifest: dict) -> str:
    body = json.dumps(manifest, indent=2, sort_keys=True, default=str)
    return "\n# run manifest\n" + "\n".join("# " + line for line in body.splitlines()) + "\n"


class _Writer:
    def __init__(self, bundle: ReportBundle):
        self.bundle = bundle
        bundle.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.bundle.out_dir / name
        self.bundle.files.append(p)
        return p

    def text(self, name: str, content: str) -> None:
        self.path(name).write_text(content + _footer(self.bundle.manifest), encoding="utf-8")


def _start(command: str, config: RunConfig) -> ReportBundle:
    bundle = ReportBundle(command=command, outcome=SUCCESS, out_dir=Path(config.out_dir))
    bundle.manifest = {"started_at": report.utcnow()}
    return bundle


def _seal(bundle: ReportBundle, config: RunConfig, counts: dict, extra: Optional[dict] = None) -> _Writer:
    bundle.manifest = report.build_manifest(bundle.command, config.snapshot(), bundle.manifest["started_at"],
                                            bundle.outcome, counts, extra)
    writer = _Writer(bundle)
    report.write_failures(writer.path("errors.jsonl"), bundle.failures)
    report.write_manifest(writer.path("manifest.json"), bundle.manifest)
    return writer


# commands

def cmd_measure(config: RunConfig, client: Optional[ModelClient] = None) -> ReportBundle:
    """Score every fact in ``config.mode`` and write the scores table."""
    if config.base is None:
        raise ConfigError("measure needs a base endpoint (--base)")
    if config.mode == IMPLICIT and config.instilled is None:
        raise MissingInstilledEndpointError("implicit mode needs an instilled endpoint (--instilled)")
    client = client or make_client(config)
    bundle = _start("measure", config)
    facts, templates = load_inputs(config)
    scores, bundle.failures = measure_facts(config, client, list(facts), templates, config.mode,
                                            config.base, config.instilled)
    bundle.outcome = outcome_of(len(facts), len(bundle.failures))
    counts = {"facts": len(facts), "scored": len(scores), "failed": len(bundle.failures)}
    writer = _seal(bundle, config, counts)
    if bundle.outcome == ABORTED:
        return bundle
    bundle.scores = [scores[k] for k in sorted(scores)]
    report.write_scores(writer.path("scores.jsonl"), bundle.scores)
    writer.text("scores.txt", report.score_rows_text(bundle.scores))
    return bundle


def cmd_compare(config: RunConfig, client: Optional[ModelClient] = None) -> ReportBundle:
    """Explicit vs implicit scores per fact, with mismatch tables and scatter series."""
    if config.base is None:
        raise ConfigError("compare needs a base endpoint (--base)")
    if config.instilled is None:
        raise MissingInstilledEndpointError("compare needs an instilled endpoint (--instilled)")
    if config.instilled == config.base:
        raise SameEndpointImplicitError("the instilled endpoint must differ from the base endpoint")
    metrics = config.metrics(allowed=("entropy", "kl"))
    client = client or make_client(config)
    bundle = _start("compare", config)
    facts, templates = load_inputs(config)
    facts = list(facts)
    explicit, fail_e = measure_facts(config, client, facts, templates, EXPLICIT, config.base)
    implicit, fail_i = measure_facts(config, client, facts, templates, IMPLICIT, config.base, config.instilled)
    reasons: Dict[str, List[str]] = {}
    for mode, fails in ((EXPLICIT, fail_e), (IMPLICIT, fail_i)):
        for f in fails:
            reasons.setdefault(f.fact_id, []).append(f"{mode}: {f.reason}")
    bundle.failures = [Failure(fid, "; ".join(r)) for fid, r in sorted(reasons.items())]
    both = sorted(set(explicit) & set(implicit))
    bundle.outcome = outcome_of(len(facts), len(bundle.failures))
    counts = {"facts": len(facts), "scored": len(both), "failed": len(bundle.failures)}
    writer = _seal(bundle, config, counts)
    if bundle.outcome == ABORTED:
        return bundle

    bundle.scores = [explicit[f] for f in both] + [implicit[f] for f in both]
    report.write_scores(writer.path("scores.jsonl"), bundle.scores)
    writer.text("scores.txt", report.score_rows_text(bundle.scores))
    th = config.thresholds
    for metric in metrics:
        results = [mismatch_detect(implicit[f], explicit[f], metric, th.kl_ratio, th.kl_abs) for f in both]
        flagged = [r for r in results if r.mismatched]
        bundle.mismatches[metric] = flagged
        bundle.scatter[metric] = [(metric_value(explicit[f], metric), metric_value(implicit[f], metric))
                                  for f in both]
        rule = results[0].rule_applied if results else metric
        report.write_mismatches(writer.path(f"mismatches_{metric}.jsonl"), flagged)
        writer.text(f"mismatches_{metric}.txt", report.mismatch_text(flagged, metric, rule))
        report.write_scatter(writer.path(f"scatter_{metric}.tsv"), metric, bundle.scatter[metric])
    return bundle


def read_levels(path) -> List[dict]:
    rows = []
    for lineno, raw in iter_jsonl(path):
        try:
            level = raw["level"]
            if isinstance(level, bool) or not isinstance(level, int) or level < 1:
                raise ParseError(f"{path}:{lineno}: level must be a positive integer")
            rows.append({"fact_id": str(raw["fact_id"]), "level": level, "endpoint": raw.get("endpoint"),
                         "group": raw.get("group"), "model": raw.get("model")})
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
    return rows


def cmd_synth_eval(config: RunConfig, client: Optional[ModelClient] = None) -> ReportBundle:
    """Pairwise accuracy of each metric over degradation-level series.

    Each levels-file row names a fact, its degradation level (1 = fully
    known) and optionally the endpoint trained on it. Facts are measured in
    explicit mode on that endpoint; series are grouped by (model, group),
    where the group defaults to the fact's relation.
    """
    if not config.levels_path:
        raise ConfigError("synth-eval needs a levels file (--levels)")
    metrics = config.metrics()
    levels = read_levels(config.levels_path)
    client = client or make_client(config)
    bundle = _start("synth-eval", config)
    facts, templates = load_inputs(config)
    by_id = facts.by_id()
    missing = sorted({r["fact_id"] for r in levels} - set(by_id))
    if missing:
        raise ParseError(f"levels file references unknown fact ids: {missing[:5]}")

    per_endpoint: Dict[str, List[dict]] = {}
    for row in levels:
        ep = row["endpoint"] or config.base
        if ep is None:
            raise ConfigError(f"levels row for {row['fact_id']!r} names no endpoint and there is no --base")
        client.endpoint(ep)
        per_endpoint.setdefault(ep, []).append(row)

    scores: Dict[Tuple[str, str], KnowledgeScore] = {}
    failures: List[Failure] = []
    for ep, rows in sorted(per_endpoint.items()):
        got, fails = measure_facts(config, client, [by_id[r["fact_id"]] for r in rows], templates, EXPLICIT, ep)
        scores.update({(ep, fid): s for fid, s in got.items()})
        failures += [Failure(f.fact_id, f"{ep}: {f.reason}") for f in fails]
    bundle.failures = sorted(failures, key=lambda f: f.fact_id)
    bundle.outcome = outcome_of(len(levels), len(failures))
    source = "fixture" if all(client.endpoint(ep).kind == FIXTURE for ep in per_endpoint) else "live"

    series: Dict[Tuple[str, str], List[Tuple[int, KnowledgeScore]]] = {}
    for row in levels:
        ep = row["endpoint"] or config.base
        score = scores.get((ep, row["fact_id"]))
        if score is None:
            continue
        key = (row["model"] or ep, row["group"] or by_id[row["fact_id"]].relation)
        series.setdefault(key, []).append((row["level"], score))
    skipped = sorted(f"{m}/{g}" for (m, g), s in series.items() if len(s) < 2)
    for (model, group), items in sorted(series.items()):
        if len(items) < 2:
            continue
        for metric in metrics:
            result = pairwise_accuracy([(lvl, knowledge_value(s, metric)) for lvl, s in items], metric)
            bundle.pairwise.append((model, group, result))
    for model in sorted({m for m, _, _ in bundle.pairwise}):
        bundle.accuracy[model] = {
            metric: math.fsum(r.accuracy for m, _, r in bundle.pairwise if m == model and r.metric_name == metric)
            / sum(1 for m, _, r in bundle.pairwise if m == model and r.metric_name == metric)
            for metric in metrics
        }

    counts = {"rows": len(levels), "scored": len(scores), "failed": len(failures), "series": len(series)}
    writer = _seal(bundle, config, counts, {"source": source})
    if bundle.outcome == ABORTED:
        return bundle
    bundle.scores = [scores[k] for k in sorted(scores)]
    report.write_scores(writer.path("scores.jsonl"), bundle.scores)
    report.write_pairwise(writer.path("synth_eval.jsonl"), bundle.pairwise)
    detail = report.render_table(
        ["model", "group", "metric", "pairs", "correct", "accuracy"],
        [[m, g, r.metric_name, str(r.n_pairs), str(r.n_correct), f"{r.accuracy:.3f}"] for m, g, r in bundle.pairwise],
        title="Pairwise accuracy per series",
        note=f"series with fewer than two scored levels skipped: {', '.join(skipped)}" if skipped else "",
    )
    writer.text("synth_eval.txt", report.accuracy_text(bundle.accuracy, metrics, source) + "\n" + detail)
    return bundle


def read_classifications(path) -> List[dict]:
    rows = []
    for lineno, raw in iter_jsonl(path):
        try:
            cls, conf = raw["fact_class"], float(raw["confidence"])
            if cls not in FACT_CLASSES:
                raise ParseError(f"{path}:{lineno}: fact_class must be one of {FACT_CLASSES}, got {cls!r}")
            if not 0 <= conf <= 1:
                raise ParseError(f"{path}:{lineno}: confidence must lie in [0, 1]")
            rows.append({"fact_id": str(raw["fact_id"]), "fact_class": cls, "confidence": conf,
                         "relation": raw.get("relation")})
        except KeyError as exc:
            raise ParseError(f"{path}:{lineno}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError):
            raise ParseError(f"{path}:{lineno}: confidence must be a number") from None
    return rows


def cmd_align_report(config: RunConfig, client: Optional[ModelClient] = None) -> ReportBundle:
    """Per-relation, per-class metric means over confidently classified facts."""
    if not config.classifications_path:
        raise ConfigError("align-report needs a classifications file (--classifications)")
    path = Path(config.classifications_path)
    if not path.exists():
        raise ConfigError(f"classifications file not found: {path}")
    classes = read_classifications(path)
    metrics = config.metrics(allowed=("entropy", "kl"))
    bundle = _start("align-report", config)

    facts = load_facts(config.facts_path) if config.facts_path else None
    templates = load_templates(config.templates_path) if config.templates_path else {}
    if config.scores_path:
        scores = {s.fact_id: s for s in report.read_scores(config.scores_path) if s.mode == config.mode}
    else:
        if facts is None or not templates or config.base is None:
            raise ConfigError("without --scores, align-report needs facts, templates and --base to measure")
        client = client or make_client(config)
        wanted = {c["fact_id"] for c in classes}
        scores, bundle.failures = measure_facts(config, client, [f for f in facts if f.fact_id in wanted],
                                                templates, config.mode, config.base, config.instilled)

    by_id = facts.by_id() if facts is not None else {}
    labels = {rel: t.label for rel, t in templates.items() if t.label}
    for f in by_id.values():
        if f.relation_label:
            labels.setdefault(f.relation, f.relation_label)
    rows, unscored = [], 0
    for c in classes:
        score = scores.get(c["fact_id"])
        if score is None:
            unscored += 1
            continue
        relation = c["relation"] or (by_id[c["fact_id"]].relation if c["fact_id"] in by_id else None)
        if relation is None:
            raise ParseError(f"no relation known for fact {c['fact_id']!r}; supply --facts or a relation field")
        rows.append(ScoredFact(score, c["fact_class"], relation, c["confidence"]))
    th = config.thresholds
    kept = [r for r in rows if r.confidence >= th.min_confidence]
    note = ""
    if not kept:
        note = (f"(no rows: none of {len(rows)} classified facts reached "
                f"min_confidence={th.min_confidence:g})")
    for metric in metrics:
        bundle.breakdowns[metric] = relation_aggregate(
            kept, metric, th.min_confidence, th.min_count, th.margin, th.rule, labels) if kept else []

    bundle.outcome = outcome_of(len(classes), len(bundle.failures))
    counts = {"classified": len(classes), "scored": len(rows), "unscored": unscored,
              "kept": len(kept), "failed": len(bundle.failures)}
    writer = _seal(bundle, config, counts)
    if bundle.outcome == ABORTED:
        return bundle
    for metric in metrics:
        report.write_breakdowns(writer.path(f"breakdown_{metric}.jsonl"), bundle.breakdowns[metric])
        writer.text(f"breakdown_{metric}.txt", report.breakdown_text(bundle.breakdowns[metric], metric, note=note))
    return bundle


COMMANDS = {
    "measure": cmd_measure,
    "compare": cmd_compare,
    "synth-eval": cmd_synth_eval,
    "align-report": cmd_align_report,
}


# argument handling

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config, or a manifest.json from an earlier run")
    common.add_argument("--facts", help="fact file (JSONL)")
    common.add_argument("--templates", help="template file (JSONL)")
    common.add_argument("--mode", choices=(EXPLICIT, IMPLICIT))
    common.add_argument("--base", help="id of the base endpoint")
    common.add_argument("--instilled", help="id of the instilled endpoint")
    common.add_argument("--k", type=int, help="top-k size (default 100)")
    common.add_argument("--metric", choices=METRIC_CHOICES)
    common.add_argument("--seed", type=int, help="sampling seed (default 42)")
    common.add_argument("--sample", type=int, help="sample N facts per relation")
    common.add_argument("--out", help="output directory")
    common.add_argument("--kl-ratio", type=float)
    common.add_argument("--kl-abs", type=float)
    common.add_argument("--margin", type=float)
    common.add_argument("--min-confidence", type=float)
    common.add_argument("--min-count", type=int)
    common.add_argument("--rank-threshold", type=int)
    common.add_argument("--max-in-flight", type=int)
    common.add_argument("--fixture", action="append", default=[], metavar="ID=PATH",
                        help="register a fixture file as endpoint ID (repeatable)")
    common.add_argument("--classifications", help="fact-class file for align-report (JSONL)")
    common.add_argument("--scores", help="existing scores.jsonl for align-report")
    common.add_argument("--levels", help="degradation-level file for synth-eval (JSONL)")

    parser = argparse.ArgumentParser(prog="knowprobe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"knowprobe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("measure", parents=[common], help="score facts in one mode")
    sub.add_parser("compare", parents=[common], help="explicit vs implicit scores, mismatches, scatter")
    sub.add_parser("synth-eval", parents=[common], help="pairwise accuracy over degradation levels")
    sub.add_parser("align-report", parents=[common], help="per-relation breakdown by fact class")
    cache = sub.add_parser("cache", help="inspect or clear the response cache")
    cache.add_argument("action", choices=("inspect", "clear"))
    cache.add_argument("--config")
    return parser


def _abs(path: Optional[str]) -> Optional[str]:
    return None if path is None else str(Path(path).expanduser().resolve())


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    extra = []
    for entry in args.fixture:
        ep_id, sep, path = entry.partition("=")
        if not sep or not ep_id or not path:
            raise ConfigError(f"--fixture expects ID=PATH, got {entry!r}")
        extra.append(build_endpoint({"id": ep_id, "kind": FIXTURE, "base_url": _abs(path)}))
    if extra:
        config = replace(config, endpoints=list(config.endpoints) + extra)
    return with_overrides(
        config,
        facts_path=_abs(args.facts), templates_path=_abs(args.templates), mode=args.mode,
        base=args.base, instilled=args.instilled, k=args.k, metric=args.metric, seed=args.seed,
        sample=args.sample, out_dir=_abs(args.out), max_in_flight=args.max_in_flight,
        classifications_path=_abs(args.classifications), scores_path=_abs(args.scores),
        levels_path=_abs(args.levels), kl_ratio=args.kl_ratio, kl_abs=args.kl_abs, margin=args.margin,
        min_confidence=args.min_confidence, min_count=args.min_count, rank_threshold=args.rank_threshold,
    )


def _cache_command(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    cache = ResponseCache(config.effective_cache_dir())
    if args.action == "inspect":
        print(f"cache: {cache.directory}")
        print(f"entries: {len(cache.keys())}")
        print(f"bytes: {cache.size_bytes()}")
    else:
        print(f"removed {cache.clear()} entries from {cache.directory}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "cache":
            return _cache_command(args)
        config = config_from_args(args)
        config.validate(need_facts=args.command not in ("align-report",))
        bundle = COMMANDS[args.command](config)
    except KnowprobeError as exc:
        print(f"knowprobe: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"knowprobe: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for failure in bundle.failures:
        print(f"knowprobe: {failure.fact_id}: {failure.reason}", file=sys.stderr)
    print(f"{bundle.command}: {bundle.outcome}; wrote {len(bundle.files)} files to {bundle.out_dir}")
    return _OUTCOME_CODES[bundle.outcome]


if __name__ == "__main__":
    sys.exit(main())
