"""Evaluation toolkit for LLM-generated questions as scientific retrieval queries."""

__version__ = "0.1.0"

from .ranked_lists import RankedList, RboParams, hit_ratio, mrr, overlap_at_depth, rbo, reciprocal_rank  # noqa: E402
from .selection import QuestionBatch, SelectionConfig, mmr_rbo, rank_batch, sim_d, sim_q  # noqa: E402
from .stats import CorrelationSummary, batch_correlation_summary, fisher_z, global_correlation, spearman  # noqa: E402

__all__ = [
    "CorrelationSummary",
    "QuestionBatch",
    "RankedList",
    "RboParams",
    "SelectionConfig",
    "batch_correlation_summary",
    "fisher_z",
    "global_correlation",
    "hit_ratio",
    "mmr_rbo",
    "mrr",
    "overlap_at_depth",
    "rank_batch",
    "rbo",
    "reciprocal_rank",
    "sim_d",
    "sim_q",
    "spearman",
]
