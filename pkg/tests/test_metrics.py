import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deccaf.metrics import (
    cost_per_100,
    report_to_csv_rows,
    summarize,
    weighted_auc,
    weighted_ece,
)


class TestCostPer100:
    def test_perfect_predictions_cost_nothing(self):
        labels = np.array([0, 1, 0, 1])
        assert cost_per_100(labels, labels, 0.5) == 0.0

    def test_reject_all_closed_form(self):
        # 12% positives, lambda 0.057: 100 * 0.057 * 0.88
        labels = np.array([1] * 12 + [0] * 88)
        preds = np.ones(100, dtype=int)
        assert cost_per_100(preds, labels, 0.057) == pytest.approx(5.016, abs=1e-9)

    def test_lambda_one_is_error_rate(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, 500)
        preds = rng.integers(0, 2, 500)
        assert cost_per_100(preds, labels, 1.0) == pytest.approx(
            100 * float((preds != labels).mean())
        )

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cost_per_100(np.zeros(3), np.zeros(4), 1.0)


class TestWeightedEce:
    def test_balanced_constant_half_is_calibrated(self):
        probs = np.full(100, 0.5)
        outcomes = np.array([0, 1] * 50)
        assert weighted_ece(probs, outcomes, np.ones(100)) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_overconfidence_gap(self):
        probs = np.full(40, 0.9)
        outcomes = np.ones(40)
        assert weighted_ece(probs, outcomes, np.ones(40)) == pytest.approx(0.1, abs=1e-12)

    def test_hand_built_two_bin_weighted_case(self):
        # two bins of total weight 4 each:
        #   low bin: mean prob (0.2+3*0.4)/4=0.35, mean outcome 3/4 -> gap 0.4
        #   high bin: mean prob (2*0.6+2*0.8)/4=0.7, mean outcome 0.5 -> gap 0.2
        # ECE = 0.5*0.4 + 0.5*0.2 = 0.3
        probs = np.array([0.2, 0.4, 0.6, 0.8])
        outcomes = np.array([0, 1, 1, 0])
        weights = np.array([1.0, 3.0, 2.0, 2.0])
        assert weighted_ece(probs, outcomes, weights, n_bins=2) == pytest.approx(0.3, abs=1e-12)

    def test_probability_one_lands_in_top_bin(self):
        assert weighted_ece(np.array([1.0]), np.array([1]), np.array([1.0])) == 0.0

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            weighted_ece(np.array([]), np.array([]), np.array([]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=2, max_value=200), st.integers(min_value=0, max_value=2**31))
    def test_invariant_to_row_permutation(self, n, seed):
        rng = np.random.default_rng(seed)
        probs = rng.random(n)
        outcomes = rng.integers(0, 2, n)
        weights = rng.uniform(0.1, 3.0, n)
        perm = rng.permutation(n)
        a = weighted_ece(probs, outcomes, weights)
        b = weighted_ece(probs[perm], outcomes[perm], weights[perm])
        assert a == pytest.approx(b, rel=1e-9)


def pairwise_auc(scores, outcomes, weights):
    """Independent O(n^2) oracle: weighted pair wins with half credit for ties."""
    pos = np.flatnonzero(outcomes == 1)
    neg = np.flatnonzero(outcomes == 0)
    total = 0.0
    for i in pos:
        for k in neg:
            if scores[i] > scores[k]:
                total += weights[i] * weights[k]
            elif scores[i] == scores[k]:
                total += 0.5 * weights[i] * weights[k]
    return total / (weights[pos].sum() * weights[neg].sum())


class TestWeightedAuc:
    def test_perfect_separation(self):
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        outcomes = np.array([0, 0, 1, 1])
        assert weighted_auc(scores, outcomes) == 1.0

    def test_identical_scores_are_chance(self):
        scores = np.full(10, 0.5)
        outcomes = np.array([0, 1] * 5)
        assert weighted_auc(scores, outcomes) == 0.5

    def test_five_point_weighted_hand_enumeration(self):
        # pairs: pos(0.4,w1) beats neg(0.1,w1)=1, ties neg(0.4,w2)=1, loses neg(0.9)
        #        pos(0.7,w3) beats neg(0.1)=3 and neg(0.4)=6, loses neg(0.9)
        # total 11 over 4*5 = 0.55
        scores = np.array([0.1, 0.4, 0.4, 0.7, 0.9])
        outcomes = np.array([0, 0, 1, 1, 0])
        weights = np.array([1.0, 2.0, 1.0, 3.0, 2.0])
        assert weighted_auc(scores, outcomes, weights) == pytest.approx(0.55, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="AUC"):
            weighted_auc(np.array([0.5, 0.6]), np.array([1, 1]))

    def test_matches_pairwise_oracle_on_random_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            scores = np.round(rng.random(n), 1)  # force ties
            outcomes = rng.integers(0, 2, n)
            if outcomes.min() == outcomes.max():
                outcomes[0] = 1 - outcomes[0]
            weights = rng.uniform(0.2, 2.0, n)
            assert weighted_auc(scores, outcomes, weights) == pytest.approx(
                pairwise_auc(scores, outcomes, weights), rel=1e-12
            )

    def test_unit_weights_match_mann_whitney(self):
        rng = np.random.default_rng(4)
        scores = rng.random(200)
        outcomes = rng.integers(0, 2, 200)
        got = weighted_auc(scores, outcomes, np.ones(200))
        assert got == pytest.approx(pairwise_auc(scores, outcomes, np.ones(200)), rel=1e-12)


class TestSummarize:
    def test_identical_results_have_zero_width(self):
        report = summarize({"deccaf": [2.0, 2.0, 2.0], "random": [3.0, 3.0, 3.0]})
        assert report.strategies["deccaf"].ci95 == 0.0

    def test_two_variation_interval(self):
        # 1.96 * population sd (=1) / sqrt(2)
        report = summarize({"deccaf": [4.0, 6.0], "random": [5.0, 5.0]})
        s = report.strategies["deccaf"]
        assert s.mean == 5.0
        assert s.ci95 == pytest.approx(1.96 / math.sqrt(2), abs=1e-12)
        assert s.ci95 == pytest.approx(1.386, abs=1e-3)

    def test_win_rate_one_when_strictly_better_everywhere(self):
        report = summarize({"deccaf": [1.0, 1.1, 0.9], "ova": [1.5, 1.2, 1.0]})
        assert report.win_rates["deccaf_vs_ova"] == 1.0

    def test_tie_is_not_a_win(self):
        report = summarize({"deccaf": [1.0, 2.0], "ova": [1.0, 3.0]})
        assert report.win_rates["deccaf_vs_ova"] == 0.5

    def test_single_variation_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            summarize({"deccaf": [1.0]})

    def test_significance_bands_recorded(self):
        report = summarize({"deccaf": [1, 2], "random": [2, 3]})
        assert report.metadata["significant_band"] == [0.68, 1.0]
        assert report.metadata["inconclusive_band"] == [0.28, 0.68]

    def test_report_round_trips_through_json(self):
        report = summarize(
            {"deccaf": [1.0, 2.0], "random": [2.0, 3.0]},
            scenario={"lambda": 0.057},
            model_metrics={"classifier_h": {"ece": 0.04}},
        )
        blob = json.loads(report.dumps())
        assert blob["scenario"]["lambda"] == 0.057
        assert blob["strategies"]["deccaf"]["mean"] == 1.5
        rows = report_to_csv_rows(report)
        assert len(rows) == 4
        assert {r["strategy"] for r in rows} == {"deccaf", "random"}
