import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from deccaf.data_model import CostStructure, weights_for
from deccaf.errors import DegenerateTrainingError
from deccaf.metrics import weighted_ece
from deccaf.scorer import (
    FAMILY_LINEAR,
    FAMILY_STUMPS,
    Scorer,
    TrainConfig,
    fit,
    inverse_link,
    linear_objective,
    predict_class,
    select_scorer,
    weighted_log_loss,
)


class TestInverseLink:
    def test_zero_maps_to_half(self):
        assert inverse_link(0.0) == 0.5

    def test_large_score(self):
        # analytic: 1 / (1 + e^-20)
        assert inverse_link(20.0) == pytest.approx(1.0 / (1.0 + math.exp(-20.0)), abs=1e-15)
        assert inverse_link(20.0) == pytest.approx(0.9999999979, abs=1e-9)

    @given(st.floats(min_value=-30, max_value=30))
    def test_sigmoid_identity(self, g):
        assert inverse_link(-g) == pytest.approx(1.0 - inverse_link(g), abs=1e-12)


class TestWeightedLogLoss:
    def test_uninformed_score(self):
        assert weighted_log_loss([0.0], [1], [1.0]) == pytest.approx(math.log(2), abs=1e-12)

    def test_symmetric_pair(self):
        assert weighted_log_loss([0.0, 0.0], [1, 0], [1.0, 1.0]) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_weighted_single_row(self):
        # hand oracle: -log(sigmoid(2)) = log(1 + e^-2); the weight cancels
        expected = math.log(1.0 + math.exp(-2.0))
        assert weighted_log_loss([2.0], [1], [3.0]) == pytest.approx(expected, abs=1e-12)
        assert weighted_log_loss([2.0], [1], [3.0]) == pytest.approx(0.126928, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            weighted_log_loss([0.0, 1.0], [1], [1.0])

    def test_clipping_keeps_loss_finite(self):
        assert math.isfinite(weighted_log_loss([1000.0], [0], [1.0]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=1, max_value=60), st.integers(min_value=0, max_value=2**31))
    def test_zero_weight_correct_instance_never_changes_loss(self, n, seed):
        rng = np.random.default_rng(seed)
        scores = rng.normal(0, 3, n)
        labels = rng.integers(0, 2, n)
        weights = rng.uniform(0.1, 2.0, n)
        base = weighted_log_loss(scores, labels, weights)
        appended = weighted_log_loss(
            np.append(scores, 5.0), np.append(labels, 1), np.append(weights, 0.0)
        )
        assert appended == base


class TestLinearGradient:
    def test_matches_central_differences_at_100_points(self):
        rng = np.random.default_rng(3)
        n, d = 200, 5
        X = rng.standard_normal((n, d))
        y = rng.integers(0, 2, n).astype(float)
        w = rng.uniform(0.5, 2.0, n)
        h = 1e-6
        for _ in range(100):
            theta = rng.normal(0, 1.5, d + 1)
            _, grad = linear_objective(theta, X, y, w, l2_penalty=0.37)
            fd = np.empty_like(theta)
            for k in range(len(theta)):
                up = theta.copy()
                dn = theta.copy()
                up[k] += h
                dn[k] -= h
                fd[k] = (
                    linear_objective(up, X, y, w, 0.37)[0]
                    - linear_objective(dn, X, y, w, 0.37)[0]
                ) / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel <= 1e-5


class TestFit:
    def test_separable_two_points_beats_constant(self):
        X = np.array([[-1.0], [1.0]])
        y = np.array([0, 1])
        w = np.ones(2)
        model = fit(X, y, w, TrainConfig(family=FAMILY_LINEAR, l2_penalty=1e-6))
        assert weighted_log_loss(model.score(X), y, w) < math.log(2)

    def test_single_class_targets_return_flagged_constant(self):
        X = np.random.default_rng(0).standard_normal((10, 3))
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            model = fit(X, np.ones(10), np.ones(10), TrainConfig())
        assert model.degenerate
        assert any("single-class" in str(r.message) for r in rec)
        # probability is the clipped base rate 1 - 1e-12
        assert model.predict_proba(X[:1])[0] == pytest.approx(1.0, abs=1e-9)

    def test_nonfinite_features_raise(self):
        with pytest.raises(DegenerateTrainingError):
            fit(np.array([[np.inf]]), np.array([1]), np.array([1.0]), TrainConfig())

    def test_calibration_recovers_known_sigmoid(self):
        # oracle: data generated from a known linear logit
        rng = np.random.default_rng(11)
        n, d = 50_000, 6
        X = rng.standard_normal((n, d))
        theta = rng.normal(0, 0.7, d)
        p = expit(X @ theta + 0.3)
        y = (rng.random(n) < p).astype(float)
        model = fit(X, y, np.ones(n), TrainConfig(family=FAMILY_LINEAR, l2_penalty=1e-8))
        assert weighted_ece(model.predict_proba(X), y, np.ones(n)) <= 0.05

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((400, 4))
        y = rng.integers(0, 2, 400)
        w = rng.uniform(0.5, 1.5, 400)
        cfg = TrainConfig(family=FAMILY_STUMPS, max_iterations=20, seed=9)
        m1 = fit(X, y, w, cfg)
        m2 = fit(X, y, w, cfg)
        assert np.array_equal(m1.score(X), m2.score(X))

    def test_stumps_training_loss_beats_constant(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((2000, 5))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
        w = np.ones(2000)
        model = fit(X, y, w, TrainConfig(family=FAMILY_STUMPS, max_iterations=30))
        base = float(np.average(y, weights=w))
        const_loss = weighted_log_loss(np.full(2000, math.log(base / (1 - base))), y, w)
        assert weighted_log_loss(model.score(X), y, w) < const_loss


class TestReweightingIdentity:
    def test_cost_weighted_error_equals_resampled_unweighted_error(self):
        # Monte Carlo importance-resampling oracle, 10k draws, 3 SE agreement
        rng = np.random.default_rng(21)
        n = 3000
        labels = rng.integers(0, 2, n)
        preds = rng.integers(0, 2, n)
        costs = weights_for(labels, CostStructure(0.057))
        weighted_error = float((costs * (preds != labels)).sum() / costs.sum())
        draws = rng.choice(n, size=10_000, p=costs / costs.sum())
        resampled = (preds[draws] != labels[draws]).astype(float)
        se = resampled.std() / math.sqrt(len(resampled))
        assert abs(resampled.mean() - weighted_error) <= 3 * se


class TestPredictClass:
    def test_positive_score_is_class_one(self):
        model = Scorer(FAMILY_LINEAR, 1, TrainConfig(family=FAMILY_LINEAR), 0.01, {})
        assert predict_class(model, [[0.0]])[0] == 1

    def test_negative_score_is_class_zero(self):
        model = Scorer(FAMILY_LINEAR, 1, TrainConfig(family=FAMILY_LINEAR), -3.0, {})
        assert predict_class(model, [[0.0]])[0] == 0

    def test_tie_goes_to_class_zero(self):
        model = Scorer(FAMILY_LINEAR, 1, TrainConfig(family=FAMILY_LINEAR), 0.0, {})
        assert predict_class(model, [[0.0]])[0] == 0


class TestPersistence:
    def test_round_trip_preserves_scores(self, tmp_path):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((300, 4))
        y = rng.integers(0, 2, 300)
        model = fit(X, y, np.ones(300), TrainConfig(max_iterations=15))
        path = tmp_path / "model.json"
        model.save(path)
        back = Scorer.load(path)
        assert np.array_equal(back.score(X), model.score(X))
        assert back.config == model.config

    def test_checksum_mismatch_rejected(self, tmp_path):
        model = Scorer(FAMILY_LINEAR, 1, TrainConfig(family=FAMILY_LINEAR), 0.5, {})
        path = tmp_path / "model.json"
        model.save(path)
        text = path.read_text().replace("0.5", "0.75")
        path.write_text(text)
        with pytest.raises(ValueError, match="checksum"):
            Scorer.load(path)


class TestSelectScorer:
    def test_grid_selection_is_deterministic_and_uses_validation(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((800, 3))
        y = (X[:, 0] > 0.2).astype(int)
        Xv = rng.standard_normal((400, 3))
        yv = (Xv[:, 0] > 0.2).astype(int)
        w, wv = np.ones(800), np.ones(400)
        cfg = TrainConfig(max_iterations=20)
        a = select_scorer(X, y, w, Xv, yv, wv, cfg)
        b = select_scorer(X, y, w, Xv, yv, wv, cfg)
        assert np.array_equal(a.score(Xv), b.score(Xv))
        assert weighted_log_loss(a.score(Xv), yv, wv) < math.log(2)
