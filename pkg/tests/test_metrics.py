import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hklm.metrics import (
    MetricsError,
    average_precision,
    bio_tags_to_spans,
    compute_task_metrics,
    distinct_n,
    hits_at,
    is_valid_bio,
    map_score,
    mrr_at,
    multilabel_prf,
    reciprocal_rank_at,
    span_micro_prf,
)
from oracles import (
    naive_average_precision,
    naive_distinct,
    naive_hits,
    naive_map,
    naive_mrr,
    naive_multilabel,
    naive_span_prf,
)


class TestRankingClosedForms:
    def test_gold_second_mrr(self):
        rels = [[0, 1, 0, 0, 0]]
        assert mrr_at(rels, 1) == 0.0
        assert mrr_at(rels, 5) == 0.5

    def test_single_candidate(self):
        assert mrr_at([[1]], 1) == 1.0
        assert mrr_at([[0]], 1) == 0.0

    def test_perfect_oracle_map_one(self):
        assert map_score([[1, 0, 0], [1, 0]]) == 1.0

    def test_ap_all_irrelevant_zero(self):
        assert average_precision([0, 0, 0]) == 0.0

    def test_hits_monotone_in_n(self):
        rng = np.random.default_rng(0)
        rels = [[int(rng.random() < 0.2) for _ in range(10)] for _ in range(40)]
        prev_h, prev_m = 0.0, 0.0
        for n in range(1, 11):
            h, m = hits_at(rels, n), mrr_at(rels, n)
            assert h >= prev_h and m >= prev_m
            prev_h, prev_m = h, m

    def test_adding_strictly_worse_candidate_keeps_mrr1(self):
        rels = [1, 0, 0]
        assert reciprocal_rank_at(rels, 1) == reciprocal_rank_at(rels + [0], 1)

    def test_distinct_maximal_repetition(self):
        resp = ["a", "b", "a", "b"]
        selected = [resp] * 5
        grams_one = len({("a", "b"), ("b", "a")})
        total = 5 * 3
        assert distinct_n(selected, 2) == pytest.approx(grams_one / total)

    def test_distinct_short_responses(self):
        assert distinct_n([["a"]], 2) == 0.0


class TestOracleEquivalence:
    def test_ranking_metrics_100_random(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n_q = int(rng.integers(1, 8))
            rels = [
                [int(rng.random() < 0.3) for _ in range(int(rng.integers(1, 12)))]
                for _ in range(n_q)
            ]
            assert abs(map_score(rels) - naive_map(rels)) <= 1e-12
            for n in (1, 3, 5, 10):
                assert abs(mrr_at(rels, n) - naive_mrr(rels, n)) <= 1e-12
                assert abs(hits_at(rels, n) - naive_hits(rels, n)) <= 1e-12

    def test_distinct_100_random(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            responses = [
                [int(x) for x in rng.integers(0, 6, int(rng.integers(0, 9)))]
                for _ in range(int(rng.integers(1, 6)))
            ]
            for n in (1, 2, 3, 4):
                assert abs(distinct_n(responses, n) - naive_distinct(responses, n)) <= 1e-12

    def test_span_f1_100_random(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            def spans():
                return [
                    (int(rng.integers(0, 5)), int(rng.integers(5, 9)), str(rng.integers(0, 3)))
                    for _ in range(int(rng.integers(0, 4)))
                ]
            pred = [spans() for _ in range(n)]
            gold = [spans() for _ in range(n)]
            mine = span_micro_prf(pred, gold)
            ref = naive_span_prf(pred, gold)
            for a, b in zip(mine, ref):
                assert abs(a - b) <= 1e-12

    def test_multilabel_100_random(self):
        rng = np.random.default_rng(3)
        labels = [f"l{i}" for i in range(6)]
        for _ in range(100):
            n = int(rng.integers(1, 7))
            pred = [{l for l in labels if rng.random() < 0.3} for _ in range(n)]
            gold = [{l for l in labels if rng.random() < 0.3} for _ in range(n)]
            mine = multilabel_prf(pred, gold)
            acc, micro_f1, macro_f1 = naive_multilabel(pred, gold)
            assert abs(mine["accuracy"] - acc) <= 1e-12
            assert abs(mine["micro"][2] - micro_f1) <= 1e-12
            assert abs(mine["macro"][2] - macro_f1) <= 1e-12


class TestMetricBounds:
    @given(
        st.lists(
            st.lists(st.integers(0, 1), min_size=1, max_size=10), min_size=1, max_size=8
        )
    )
    def test_all_in_unit_interval(self, rels):
        for value in (
            map_score(rels),
            mrr_at(rels, 3),
            hits_at(rels, 3),
        ):
            assert 0.0 <= value <= 1.0


class TestBio:
    def test_spans_roundtrip(self):
        tags = ["O", "B-x", "I-x", "O", "B-y", "O"]
        assert bio_tags_to_spans(tags) == [(1, 3, "x"), (4, 5, "y")]

    def test_adjacent_b_tags(self):
        tags = ["B-x", "B-x", "I-x"]
        assert bio_tags_to_spans(tags) == [(0, 1, "x"), (1, 3, "x")]

    def test_validity_checks(self):
        assert is_valid_bio(["O", "B-x", "I-x"])
        assert not is_valid_bio(["O", "I-x"])
        assert not is_valid_bio(["B-y", "I-x"])

    def test_type_switch_opens_new_span(self):
        assert bio_tags_to_spans(["B-x", "I-y"]) == [(0, 1, "x"), (1, 2, "y")]


class TestDispatcher:
    def test_id_mismatch_rejected(self):
        with pytest.raises(MetricsError, match="ids"):
            compute_task_metrics("ner", {"a": []}, {"b": []})

    def test_unknown_task(self):
        with pytest.raises(MetricsError):
            compute_task_metrics("zzz", {}, {})

    def test_qa_bundle(self):
        predictions = {"q1": [2, 0, 1], "q2": [1, 0]}
        gold = {"q1": {0}, "q2": {1}}
        out = compute_task_metrics("qa", predictions, gold)
        assert out["mrr@1"] == 0.5
        assert out["map"] == pytest.approx((0.5 + 1.0) / 2)

    def test_dialog_bundle(self):
        predictions = {"c1": ([0, 1], [["x", "y"], ["z"]])}
        gold = {"c1": {0}}
        out = compute_task_metrics("dialog", predictions, gold)
        assert out["hits@1"] == 1.0
        assert out["distinct-1"] == 1.0
