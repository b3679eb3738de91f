"""Measure factual knowledge in language models with entropy and KL-divergence."""

__version__ = "0.1.0"

from .distributions import (  # noqa: E402
    OOV_TOKEN,
    KnowledgeScore,
    SupportDistribution,
    TokenProb,
    TopKPrediction,
    approximate_pair,
    entropy,
    kl_divergence,
    knowledge_scores,
)
from .instill import (  # noqa: E402
    FactRecord,
    LogprobQuery,
    MeasurementPlan,
    PromptTemplate,
    build_plan,
    explicit_statement,
    render_prompt,
)
from .client import ModelClient, ModelEndpoint, ResponseCache, load_fixture  # noqa: E402
from .datasets import (  # noqa: E402
    FactFile,
    degrade_prompt,
    generate_negative,
    load_facts,
    load_templates,
    sample_per_relation,
)
from .evaluation import (  # noqa: E402
    mismatch_detect,
    pairwise_accuracy,
    precision_at,
    relation_aggregate,
)

__all__ = [
    "OOV_TOKEN", "KnowledgeScore", "SupportDistribution", "TokenProb", "TopKPrediction",
    "approximate_pair", "entropy", "kl_divergence", "knowledge_scores",
    "FactRecord", "LogprobQuery", "MeasurementPlan", "PromptTemplate", "build_plan",
    "explicit_statement", "render_prompt",
    "ModelClient", "ModelEndpoint", "ResponseCache", "load_fixture",
    "FactFile", "degrade_prompt", "generate_negative", "load_facts", "load_templates",
    "sample_per_relation",
    "mismatch_detect", "pairwise_accuracy", "precision_at", "relation_aggregate",
]
