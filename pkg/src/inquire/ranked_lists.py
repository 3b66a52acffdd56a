"""Ranked-list algebra: agreement counts, rank-biased overlap, MRR and hit ratio."""

from __future__ import annotations

from collections.abc import Hashable, Mapping, Sequence
from dataclasses import dataclass
from typing import Union

from .errors import DataError, ParameterError

DEFAULT_DEPTH = 50
DEFAULT_PERSISTENCE = 0.9


@dataclass(frozen=True)
class RankedList:
    """Ordered, duplicate-free result list for a single query.

    ``scores``, when present, runs parallel to ``items`` and must be
    non-increasing. ``depth_k`` is the evaluation depth; the list may be
    shorter than it.
    """

    query_id: str
    items: tuple[str, ...]
    scores: tuple[float, ...] | None = None
    depth_k: int = DEFAULT_DEPTH

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        if self.scores is not None:
            object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if self.depth_k < 1:
            raise ParameterError(f"depth_k must be >= 1, got {self.depth_k}")
        if len(set(self.items)) != len(self.items):
            raise DataError(f"ranked list {self.query_id!r} contains duplicate ids")
        if self.scores is not None:
            if len(self.scores) != len(self.items):
                raise DataError(
                    f"ranked list {self.query_id!r}: {len(self.scores)} scores for {len(self.items)} items"
                )
            if any(b > a for a, b in zip(self.scores, self.scores[1:])):
                raise DataError(f"ranked list {self.query_id!r}: scores are not non-increasing")

    def __len__(self) -> int:
        return len(self.items)

    def position(self, doc_id: str) -> int | None:
        """1-based position of ``doc_id``, or None when absent."""
        try:
            return self.items.index(doc_id) + 1
        except ValueError:
            return None


@dataclass(frozen=True)
class RboParams:
    p: float = DEFAULT_PERSISTENCE
    k: int = DEFAULT_DEPTH

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ParameterError(f"RBO persistence p must lie in (0, 1), got {self.p}")
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"RBO depth k must be a positive integer, got {self.k}")


ListLike = Union[RankedList, Sequence[Hashable]]

_MISSING = object()


def _items(x: ListLike) -> Sequence[Hashable]:
    return x.items if isinstance(x, RankedList) else x


def overlap_at_depth(s: ListLike, t: ListLike, d: int) -> int:
    """Number of ids shared by the first ``d`` entries of both lists."""
    if d < 1:
        raise ParameterError(f"depth must be >= 1, got {d}")
    return len(set(_items(s)[:d]) & set(_items(t)[:d]))


def agreement_counts(s: ListLike, t: ListLike, k: int) -> list[int]:
    """Agreement counts X_1..X_k, computed incrementally in one pass.

    Positions past the end of a list count as non-overlapping.
    """
    a, b = _items(s), _items(t)
    seen_a: set = set()
    seen_b: set = set()
    x = 0
    counts = []
    for d in range(k):
        ia = a[d] if d < len(a) else _MISSING
        ib = b[d] if d < len(b) else _MISSING
        if ia is not _MISSING and ia == ib:
            x += 1
        else:
            if ia is not _MISSING and ia in seen_b:
                x += 1
            if ib is not _MISSING and ib in seen_a:
                x += 1
        if ia is not _MISSING:
            seen_a.add(ia)
        if ib is not _MISSING:
            seen_b.add(ib)
        counts.append(x)
    return counts


def rbo(s: ListLike, t: ListLike, params: RboParams | None = None) -> float:
    """Rank-biased overlap of two lists evaluated at depth ``params.k``.

    Uses the extrapolated form
    ``(X_k / k) * p**k + (1 - p) / p * sum_{d=1..k} (X_d / d) * p**d``
    which equals 1 for identical lists and 0 for disjoint ones.
    """
    params = params or RboParams()
    p, k = params.p, params.k
    counts = agreement_counts(s, t, k)
    weighted = 0.0
    pd = 1.0
    for d, x in enumerate(counts, start=1):
        pd *= p
        weighted += x / d * pd
    value = counts[-1] / k * pd + (1.0 - p) / p * weighted
    # rounding can push identical lists a few ulps past 1
    return min(1.0, max(0.0, value))


def reciprocal_rank(ranked: ListLike, target: Hashable) -> float:
    """1 / (1-based position of ``target``); 0.0 when it is absent."""
    items = _items(ranked)
    for i, doc in enumerate(items, start=1):
        if doc == target:
            return 1.0 / i
    return 0.0


def _target_for(ranked: RankedList, targets: Mapping[str, str]) -> str:
    try:
        return targets[ranked.query_id]
    except KeyError:
        raise DataError(f"no target document for query {ranked.query_id!r}") from None


def mrr(lists: Sequence[RankedList], targets: Mapping[str, str]) -> float:
    """Mean reciprocal rank of each list's target (looked up by ``query_id``)."""
    if not lists:
        raise ParameterError("mrr needs at least one ranked list")
    total = 0.0
    for ranked in lists:
        total += reciprocal_rank(ranked, _target_for(ranked, targets))
    return total / len(lists)


def hit_ratio(lists: Sequence[RankedList], targets: Mapping[str, str], k: int = DEFAULT_DEPTH) -> float:
    """Fraction of lists whose first ``k`` items contain their target."""
    if not lists:
        raise ParameterError("hit_ratio needs at least one ranked list")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    hits = sum(1 for ranked in lists if _target_for(ranked, targets) in ranked.items[:k])
    return hits / len(lists)
