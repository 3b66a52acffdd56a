"""Scoring generated questions within a batch by MMR over rank-biased overlap.

A question scores well when its results resemble those of a trusted
reference query (keywords or context) while differing from every other
question in the same batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import DataError, ParameterError
from .ranked_lists import RankedList, RboParams, rbo

DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class QuestionBatch:
    """Result lists for one masked paragraph's question family.

    ``question_lists[i]`` holds the results of question ``i`` (0-based, in
    generation order). ``target_id`` is only known at evaluation time.
    """

    paragraph_id: str
    reference: RankedList
    question_lists: tuple[RankedList, ...]
    target_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "question_lists", tuple(self.question_lists))
        if not self.question_lists:
            raise DataError(f"batch {self.paragraph_id!r} has no questions")
        depths = {self.reference.depth_k, *(q.depth_k for q in self.question_lists)}
        if len(depths) != 1:
            raise DataError(f"batch {self.paragraph_id!r} mixes evaluation depths {sorted(depths)}")

    def __len__(self) -> int:
        return len(self.question_lists)

    def truncated(self, n: int) -> QuestionBatch:
        """The batch restricted to its first ``n`` questions."""
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        return QuestionBatch(self.paragraph_id, self.reference, self.question_lists[:n], self.target_id)


@dataclass(frozen=True)
class SelectionConfig:
    lambda_: float = DEFAULT_LAMBDA
    rbo_params: RboParams = field(default_factory=RboParams)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ParameterError(f"lambda must lie in [0, 1], got {self.lambda_}")


def sim_q(question: RankedList, reference: RankedList, params: RboParams | None = None) -> float:
    """RBO between a question's results and the reference query's results."""
    return rbo(question, reference, params)


def _check_index(i: int, batch: QuestionBatch) -> None:
    if not 0 <= i < len(batch):
        raise ParameterError(f"question index {i} out of range for batch of {len(batch)}")


def sim_d(question_index: int, batch: QuestionBatch, params: RboParams | None = None) -> float:
    """Highest RBO between question ``question_index`` and any other question.

    A question is never compared with itself; a single-question batch
    yields 0.0.
    """
    _check_index(question_index, batch)
    own = batch.question_lists[question_index]
    return max(
        (rbo(own, other, params) for j, other in enumerate(batch.question_lists) if j != question_index),
        default=0.0,
    )


def mmr_rbo(question_index: int, batch: QuestionBatch, config: SelectionConfig | None = None) -> float:
    config = config or SelectionConfig()
    _check_index(question_index, batch)
    relevance = sim_q(batch.question_lists[question_index], batch.reference, config.rbo_params)
    redundancy = sim_d(question_index, batch, config.rbo_params)
    return combine(relevance, redundancy, config.lambda_)


def combine(relevance: float, redundancy: float, lambda_: float) -> float:
    """``lambda * relevance - (1 - lambda) * redundancy``."""
    return lambda_ * relevance - (1.0 - lambda_) * redundancy


@dataclass(frozen=True)
class BatchSimilarities:
    """Lambda-independent ingredients of MMR-RBO for every question in a batch."""

    sim_q: tuple[float, ...]
    sim_d: tuple[float, ...]

    def mmr(self, lambda_: float) -> list[float]:
        return [combine(q, d, lambda_) for q, d in zip(self.sim_q, self.sim_d)]


def batch_similarities(batch: QuestionBatch, params: RboParams | None = None) -> BatchSimilarities:
    """sim_q and sim_d for every question, computing each pairwise RBO once.

    RBO is symmetric, so the pairwise matrix is filled from its upper
    triangle.
    """
    lists = batch.question_lists
    n = len(lists)
    pair = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            pair[i][j] = pair[j][i] = rbo(lists[i], lists[j], params)
    relevance = tuple(sim_q(q, batch.reference, params) for q in lists)
    redundancy = tuple(max((pair[i][j] for j in range(n) if j != i), default=0.0) for i in range(n))
    return BatchSimilarities(relevance, redundancy)


def rank_batch(batch: QuestionBatch, config: SelectionConfig | None = None) -> list[tuple[int, float]]:
    """All questions as ``(index, mmr_rbo)`` pairs, best first.

    Ties keep ascending question order.
    """
    config = config or SelectionConfig()
    scores = batch_similarities(batch, config.rbo_params).mmr(config.lambda_)
    return sorted(enumerate(scores), key=lambda pair: (-pair[1], pair[0]))

