"""Reordering retrieved candidates by externally computed cross-encoder scores.

Score files are JSON Lines, one record per (query, document)::

    {"paragraph_id": "...", "query_kind": "question", "question_index": 3,
     "doc_id": "...", "score": 4.2}

``question_index`` is 1-based and omitted for context and keyword queries.
"""

from __future__ import annotations

import math
import statistics
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from .errors import DataError
from .ranked_lists import RankedList, reciprocal_rank
from .retrieval import read_jsonl
from .selection import QuestionBatch

QUERY_KINDS = ("context", "keywords", "question")

QueryKey = tuple[str, "int | None"]


@dataclass(frozen=True)
class RerankScoreSet:
    paragraph_id: str
    query_kind: str
    question_index: int | None
    entries: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.query_kind not in QUERY_KINDS:
            raise DataError(f"unknown query kind {self.query_kind!r}")
        if (self.query_kind == "question") != (self.question_index is not None):
            raise DataError("question_index is required for question queries and only for them")
        for doc_id, score in self.entries.items():
            if not math.isfinite(score):
                raise DataError(f"non-finite rerank score for {doc_id!r}")

    @property
    def key(self) -> QueryKey:
        return (self.query_kind, self.question_index)


def load_rerank_scores(source) -> dict[str, dict[QueryKey, RerankScoreSet]]:
    """Group a score file by paragraph and query."""
    grouped: dict[tuple[str, str, int | None], dict[str, float]] = {}
    for n, rec in enumerate(read_jsonl(source), start=1):
        try:
            pid, kind, doc, score = str(rec["paragraph_id"]), rec["query_kind"], str(rec["doc_id"]), float(rec["score"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"rerank record {n}: needs paragraph_id, query_kind, doc_id and numeric score") from None
        qi = rec.get("question_index")
        qi = None if qi is None else int(qi)
        entries = grouped.setdefault((pid, kind, qi), {})
        if doc in entries:
            raise DataError(f"rerank record {n}: duplicate score for {doc!r} in {pid}/{kind}/{qi}")
        entries[doc] = score
    out: dict[str, dict[QueryKey, RerankScoreSet]] = {}
    for (pid, kind, qi), entries in grouped.items():
        s = RerankScoreSet(pid, kind, qi, entries)
        out.setdefault(pid, {})[s.key] = s
    return out


def rerank(candidates: RankedList, scores: RerankScoreSet | Mapping[str, float], query_id: str | None = None) -> RankedList:
    """Candidates reordered by descending score; ties keep retrieval order.

    Raises:
        DataError: some candidate has no score, or a score names a
            document outside the candidate set.
    """
    entries = scores.entries if isinstance(scores, RerankScoreSet) else scores
    missing = [d for d in candidates.items if d not in entries]
    if missing:
        raise DataError(f"no rerank score for {len(missing)} candidate(s): {', '.join(missing)}")
    if len(entries) != len(candidates.items):
        extra = sorted(set(entries) - set(candidates.items))
        raise DataError(f"rerank scores for ids outside the candidate set: {', '.join(extra)}")
    order = sorted(range(len(candidates.items)), key=lambda i: (-entries[candidates.items[i]], i))
    items = tuple(candidates.items[i] for i in order)
    return RankedList(
        query_id or candidates.query_id,
        items,
        tuple(float(entries[d]) for d in items),
        candidates.depth_k,
    )


def mrr_delta(original: RankedList, reranked: RankedList, target: str) -> float:
    """Change in the target's reciprocal rank caused by reranking."""
    if set(original.items) != set(reranked.items):
        raise DataError(f"reranked list {reranked.query_id!r} does not hold the original candidate set")
    return reciprocal_rank(reranked, target) - reciprocal_rank(original, target)


@dataclass(frozen=True)
class RerankSummary:
    """Per-paragraph reciprocal-rank movement under reranking."""

    paragraph_id: str
    context_delta: float
    keyword_delta: float
    question_deltas: tuple[float, ...]

    @property
    def mean_question_delta(self) -> float:
        # rounding may push the mean of equal values an ulp outside [min, max]
        mean = statistics.fmean(self.question_deltas)
        return min(max(mean, min(self.question_deltas)), max(self.question_deltas))

    @property
    def min_question_delta(self) -> float:
        return min(self.question_deltas)

    @property
    def max_question_delta(self) -> float:
        return max(self.question_deltas)

    def to_dict(self) -> dict:
        return {
            "context_delta": self.context_delta,
            "keyword_delta": self.keyword_delta,
            "question_deltas": list(self.question_deltas),
            "mean_question_delta": self.mean_question_delta,
            "min_question_delta": self.min_question_delta,
            "max_question_delta": self.max_question_delta,
        }


def batch_rerank_summary(
    batch: QuestionBatch, baseline: RankedList, reranked: Mapping[QueryKey, RankedList]
) -> RerankSummary:
    """Summarise reranking of one paragraph's candidate set.

    ``baseline`` is the retrieval list being reranked (the context query's
    results) and ``reranked`` maps ``("context", None)``,
    ``("keywords", None)`` and ``("question", i)`` (1-based ``i``) to the
    baseline reordered by that query's scores.
    """
    if batch.target_id is None:
        raise DataError(f"batch {batch.paragraph_id!r} has no target")
    keys = [("context", None), ("keywords", None)] + [("question", i) for i in range(1, len(batch) + 1)]
    missing = [k for k in keys if k not in reranked]
    if missing:
        raise DataError(f"paragraph {batch.paragraph_id!r}: no reranked list for {missing}")
    deltas = {k: mrr_delta(baseline, reranked[k], batch.target_id) for k in keys}
    return RerankSummary(
        batch.paragraph_id,
        deltas[("context", None)],
        deltas[("keywords", None)],
        tuple(deltas[("question", i)] for i in range(1, len(batch) + 1)),
    )


def rerank_all(baseline: RankedList, score_sets: Iterable[RerankScoreSet]) -> dict[QueryKey, RankedList]:
    return {s.key: rerank(baseline, s, f"{baseline.query_id}>{s.query_kind}{s.question_index or ''}") for s in score_sets}
