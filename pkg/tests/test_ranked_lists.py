from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from inquire.errors import DataError, ParameterError
from inquire.ranked_lists import (
    RankedList,
    RboParams,
    agreement_counts,
    hit_ratio,
    mrr,
    overlap_at_depth,
    rbo,
    reciprocal_rank,
)

ids = st.sampled_from([f"d{i}" for i in range(30)])
ranked = st.lists(ids, max_size=25, unique=True)
params = st.builds(RboParams, p=st.floats(0.01, 0.99), k=st.integers(1, 30))


class TestRankedList:
    def test_rejects_duplicates(self):
        with pytest.raises(DataError):
            RankedList("q", ("a", "b", "a"))

    def test_scores_must_match_and_not_increase(self):
        RankedList("q", ("a", "b"), (0.9, 0.9))
        with pytest.raises(DataError):
            RankedList("q", ("a", "b"), (0.9,))
        with pytest.raises(DataError):
            RankedList("q", ("a", "b"), (0.1, 0.2))

    def test_depth_must_be_positive(self):
        with pytest.raises(ParameterError):
            RankedList("q", ("a",), depth_k=0)

    def test_position(self):
        r = RankedList("q", ("a", "b", "c"))
        assert r.position("c") == 3
        assert r.position("z") is None
        assert len(r) == 3


class TestOverlap:
    @pytest.mark.parametrize("d, expected", [(1, 0), (2, 2), (3, 3)])
    def test_transposed_head(self, d, expected):
        assert overlap_at_depth(["a", "b", "c"], ["b", "a", "c"], d) == expected

    def test_identical(self):
        assert overlap_at_depth(["a", "b", "c"], ["a", "b", "c"], 3) == 3

    def test_short_lists_used_as_is(self):
        assert overlap_at_depth(["a"], ["a", "b"], 5) == 1

    def test_depth_must_be_positive(self):
        with pytest.raises(ParameterError):
            overlap_at_depth(["a"], ["a"], 0)

    @given(ranked, ranked, st.integers(1, 30))
    def test_incremental_counts_match_set_intersection(self, s, t, k):
        assert agreement_counts(s, t, k) == [overlap_at_depth(s, t, d) for d in range(1, k + 1)]

    @given(ranked, ranked)
    def test_monotone_and_bounded(self, s, t):
        counts = [overlap_at_depth(s, t, d) for d in range(1, 31)]
        assert all(c <= d for d, c in enumerate(counts, start=1))
        assert counts == sorted(counts)


class TestRbo:
    def test_hand_case(self):
        assert rbo(["a", "b", "c"], ["b", "a", "c"], RboParams(0.9, 3)) == pytest.approx(0.9, abs=1e-12)

    def test_identity_and_disjoint(self):
        s = [f"d{i}" for i in range(50)]
        assert rbo(s, s) == pytest.approx(1.0, abs=1e-12)
        assert rbo(s[:25], s[25:]) == 0.0

    def test_defaults(self):
        assert RboParams() == RboParams(0.9, 50)

    @pytest.mark.parametrize("p, k", [(0.0, 5), (1.0, 5), (-0.1, 5), (0.9, 0), (0.9, 2.5)])
    def test_invalid_params(self, p, k):
        with pytest.raises(ParameterError):
            RboParams(p, k)

    def test_accepts_ranked_lists(self):
        a = RankedList("a", ("x", "y"))
        b = RankedList("b", ("y", "x"))
        assert rbo(a, b, RboParams(0.5, 2)) == rbo(["x", "y"], ["y", "x"], RboParams(0.5, 2))

    @given(ranked, ranked, params)
    def test_matches_term_by_term_oracle(self, s, t, prm):
        assert rbo(s, t, prm) == pytest.approx(oracles.rbo_terms(s, t, prm.p, prm.k), abs=1e-12)

    @given(ranked, ranked, params)
    def test_symmetric_and_bounded(self, s, t, prm):
        value = rbo(s, t, prm)
        assert value == rbo(t, s, prm)
        assert 0.0 <= value <= 1.0

    @given(st.lists(ids, min_size=30, max_size=30, unique=True), params)
    def test_self_similarity(self, s, prm):
        assert rbo(s, s, prm) == pytest.approx(1.0, abs=1e-12)


class TestReciprocalRank:
    @pytest.mark.parametrize("target, expected", [("a", 1.0), ("d", 0.25), ("z", 0.0)])
    def test_examples(self, target, expected):
        assert reciprocal_rank(["a", "b", "c", "d"], target) == expected

    @given(ranked, ids)
    def test_positive_iff_present(self, s, target):
        assert (reciprocal_rank(s, target) > 0) == (target in s)


def _lists(*rank_of_target):
    lists, targets = [], {}
    for n, r in enumerate(rank_of_target):
        items = [f"x{n}-{i}" for i in range(5)]
        items[r - 1] = "T"
        lists.append(RankedList(f"q{n}", tuple(items)))
        targets[f"q{n}"] = "T"
    return lists, targets


class TestMrr:
    def test_all_first(self):
        assert mrr(*_lists(1, 1, 1)) == 1.0

    def test_single_second(self):
        assert mrr(*_lists(2)) == 0.5

    def test_three_lists(self):
        assert mrr(*_lists(1, 2, 4)) == pytest.approx(7 / 12, abs=1e-12)

    def test_missing_target_names_query(self):
        lists, _ = _lists(1)
        with pytest.raises(DataError, match="q0"):
            mrr(lists, {})

    def test_empty(self):
        with pytest.raises(ParameterError):
            mrr([], {})

    @given(st.lists(st.tuples(ranked, ids), min_size=1, max_size=10))
    def test_matches_brute_force(self, pairs):
        lists = [RankedList(f"q{i}", tuple(s)) for i, (s, _) in enumerate(pairs)]
        targets = {f"q{i}": t for i, (_, t) in enumerate(pairs)}
        assert mrr(lists, targets) == pytest.approx(oracles.mrr(pairs), abs=1e-12)


class TestHitRatio:
    def test_one_of_four(self):
        lists = [RankedList(f"q{i}", ("T",) if i == 0 else ("a",)) for i in range(4)]
        assert hit_ratio(lists, {f"q{i}": "T" for i in range(4)}) == 0.25

    def test_all(self):
        assert hit_ratio(*_lists(1, 3, 5)) == 1.0

    def test_depth_cutoff(self):
        lists, targets = _lists(1, 3, 2)
        assert hit_ratio(lists, targets, k=2) == pytest.approx(2 / 3)

    def test_invalid_depth(self):
        with pytest.raises(ParameterError):
            hit_ratio(*_lists(1), k=0)
