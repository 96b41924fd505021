import math

import numpy as np
import pytest

from deccaf.assigner import AssignmentProblem, solve
from deccaf.baselines import (
    full_rejection,
    logistic_phi,
    only_classifier,
    ova_assign,
    ova_surrogate,
    random_assign,
    train_ova_heads,
)
from deccaf.data_model import MODE_EQUALITY, MODE_UPPER
from deccaf.errors import InfeasibleCapacityError
from deccaf.hem import HemRows
from deccaf.metrics import cost_per_100
from deccaf.scorer import FAMILY_LINEAR, Scorer, TrainConfig


class TestOvaSurrogate:
    def test_all_zero_scores_with_agreement(self):
        val = ova_surrogate(0.0, 0.0, np.zeros(1), np.array([True]))
        assert val == pytest.approx(3 * math.log(2), abs=1e-12)

    def test_all_zero_scores_with_disagreement(self):
        val = ova_surrogate(0.0, 0.0, np.zeros(1), np.array([False]))
        assert val == pytest.approx(3 * math.log(2), abs=1e-12)

    def test_equals_sum_of_decomposed_head_losses(self):
        # independent oracle: classifier two-class terms plus one logistic
        # loss per head with target = agreement
        rng = np.random.default_rng(0)
        for _ in range(25):
            g_true, g_other = rng.normal(0, 2, 2)
            g_defer = rng.normal(0, 2, 5)
            agree = rng.random(5) < 0.5
            per_head = [
                logistic_phi(g) if a else logistic_phi(-g)
                for g, a in zip(g_defer, agree)
            ]
            oracle = logistic_phi(g_true) + logistic_phi(-g_other) + float(np.sum(per_head))
            got = ova_surrogate(g_true, g_other, g_defer, agree)
            assert got == pytest.approx(oracle, rel=1e-12)


class TestOvaAssign:
    def test_unconstrained_is_pure_argmax(self):
        rng = np.random.default_rng(1)
        probs = rng.random((20, 3))
        caps = np.full(3, 20)
        out = ova_assign(probs, caps, MODE_UPPER)
        assert np.array_equal(out, probs.argmax(axis=1))

    def test_zero_capacity_never_chosen(self):
        rng = np.random.default_rng(2)
        probs = rng.random((10, 3))
        probs[:, 1] = 1.0  # most attractive but unavailable
        out = ova_assign(probs, [5, 0, 5], MODE_EQUALITY)
        assert not (out == 1).any()

    def test_capacities_respected_exactly(self):
        rng = np.random.default_rng(3)
        probs = rng.random((12, 3))
        caps = np.array([5, 4, 3])
        out = ova_assign(probs, caps, MODE_EQUALITY)
        assert np.array_equal(np.bincount(out, minlength=3), caps)

    def test_hand_traced_greedy_differs_from_optimum(self):
        # greedy takes 0.9 for the first instance, forcing 0.2 on the third;
        # the exact solver sacrifices instance 0 to gain overall
        probs = np.array([[0.9, 0.8], [0.5, 0.1], [0.85, 0.2]])
        caps = np.array([1, 2])
        greedy = ova_assign(probs, caps, MODE_EQUALITY)
        assert greedy.tolist() == [0, 1, 1]  # hand-traced
        exact = solve(AssignmentProblem(probs, caps, MODE_EQUALITY))
        greedy_total = probs[np.arange(3), greedy].sum()
        assert exact.objective > greedy_total

    def test_confidence_order_flag(self):
        probs = np.array([[0.6, 0.5], [0.9, 0.1], [0.55, 0.5]])
        caps = np.array([1, 2])
        by_instance = ova_assign(probs, caps, MODE_EQUALITY, order="instance")
        by_conf = ova_assign(probs, caps, MODE_EQUALITY, order="confidence")
        assert by_instance.tolist() == [0, 1, 1]
        assert by_conf.tolist() == [1, 0, 1]

    def test_infeasible_rejected(self):
        with pytest.raises(InfeasibleCapacityError):
            ova_assign(np.random.rand(4, 2), [1, 1], MODE_EQUALITY)


class TestRandomAssign:
    def test_all_capacity_on_classifier(self):
        rng = np.random.default_rng(0)
        out = random_assign(6, [6, 0, 0], rng, MODE_EQUALITY)
        assert (out == 0).all()

    def test_counts_match_capacities(self):
        rng = np.random.default_rng(1)
        caps = np.array([3, 5, 2])
        out = random_assign(10, caps, rng, MODE_EQUALITY)
        assert np.array_equal(np.bincount(out, minlength=3), caps)

    def test_uniform_over_feasible_assignments(self):
        # caps [2,1] over 3 instances admit exactly 3 assignments; each
        # should appear ~1/3 of the time over 10k draws
        rng = np.random.default_rng(42)
        counts = {}
        for _ in range(10_000):
            out = tuple(random_assign(3, [2, 1], rng, MODE_EQUALITY))
            counts[out] = counts.get(out, 0) + 1
        assert len(counts) == 3
        for key, cnt in counts.items():
            assert abs(cnt / 10_000 - 1 / 3) <= 0.02

    def test_infeasible_rejected(self):
        with pytest.raises(InfeasibleCapacityError):
            random_assign(5, [2, 2], np.random.default_rng(0), MODE_EQUALITY)


class TestTrivialBaselines:
    def test_full_rejection_is_all_ones(self):
        assert full_rejection(4).tolist() == [1, 1, 1, 1]

    def test_full_rejection_cost_closed_form(self):
        labels = np.array([0] * 88 + [1] * 12)
        lam = 0.057
        cost = cost_per_100(full_rejection(100), labels, lam)
        assert cost == pytest.approx(100 * lam * 0.88, rel=1e-12)

    def test_only_classifier_follows_predict_class(self):
        scorer = Scorer(FAMILY_LINEAR, 1, TrainConfig(family=FAMILY_LINEAR), -2.0, {})
        assert only_classifier(scorer, np.zeros((3, 1))).tolist() == [0, 0, 0]


class TestSingleDecisionMakerEquivalence:
    def test_all_strategies_coincide_with_one_column(self):
        rng = np.random.default_rng(5)
        n = 30
        labels = rng.integers(0, 2, n)
        decisions = rng.integers(0, 2, (n, 1))
        probs = rng.random((n, 2))
        caps = np.array([0, n])  # everything to the single expert
        exact = solve(AssignmentProblem(probs, caps, MODE_EQUALITY)).assignment
        greedy = ova_assign(probs, caps, MODE_EQUALITY)
        rnd = random_assign(n, caps, np.random.default_rng(0), MODE_EQUALITY)
        assert np.array_equal(exact, greedy)
        assert np.array_equal(exact, rnd)
        lam = 0.3
        expert_preds = decisions[:, 0]
        costs = {cost_per_100(expert_preds, labels, lam)}
        assert len(costs) == 1


class TestTrainOvaHeads:
    def test_one_head_per_expert_trained_on_its_slice(self):
        rng = np.random.default_rng(7)
        n = 600
        x = rng.uniform(-0.5, 0.5, (n, 1))
        experts = rng.integers(1, 4, n)
        # expert 1 correct iff x>0, expert 2 always correct, expert 3 coin flip
        targets = np.where(
            experts == 1, (x[:, 0] > 0).astype(float),
            np.where(experts == 2, 1.0, (rng.random(n) < 0.5).astype(float)),
        )
        rows = HemRows(x, np.zeros(n), experts, targets, np.ones(n))
        heads = train_ova_heads(rows, rows, 3, TrainConfig(max_iterations=30),
                                learning_rates=(0.3,), l2_penalties=(0.1,))
        assert len(heads) == 3
        probe = np.hstack([np.array([[0.4], [-0.4]]), np.zeros((2, 1))])
        p1 = heads[0].predict_proba(probe)
        assert p1[0] > 0.8 and p1[1] < 0.2
        assert heads[1].degenerate  # single-class slice falls back to constant
        assert (heads[1].predict_proba(probe) > 0.99).all()

    def test_missing_expert_slice_rejected(self):
        rows = HemRows(np.zeros((3, 1)), np.zeros(3), np.array([1, 1, 1]),
                       np.array([1.0, 0.0, 1.0]), np.ones(3))
        with pytest.raises(ValueError, match="no training rows"):
            train_ova_heads(rows, rows, 2, TrainConfig(max_iterations=2))
