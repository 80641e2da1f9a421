"""Multi-agent insight discovery on pathology images, with its evaluation toolkit."""

from .dataset import BenchmarkCase, DatasetManifest, GroundTruthInsight, dataset_stats, load_dataset, validate_case
from .evaluation import (
    ScoreMatrix,
    aggregate,
    insight_f1,
    insight_precision,
    insight_recall,
    novelty,
    quality_assess,
    score_matrix,
)
from .pipeline import AgentConfig, InsightAgent, InsightRecord, run_direct_baseline, run_pipeline
from .textmetrics import avg_tfidf_cosine, distinct2, redundancy_report, rouge1, self_bleu, tokenize

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "BenchmarkCase",
    "DatasetManifest",
    "GroundTruthInsight",
    "InsightAgent",
    "InsightRecord",
    "ScoreMatrix",
    "aggregate",
    "avg_tfidf_cosine",
    "dataset_stats",
    "distinct2",
    "insight_f1",
    "insight_precision",
    "insight_recall",
    "load_dataset",
    "novelty",
    "quality_assess",
    "redundancy_report",
    "rouge1",
    "run_direct_baseline",
    "run_pipeline",
    "score_matrix",
    "self_bleu",
    "tokenize",
    "validate_case",
]
