import numpy as np
import pytest

from deccaf.data_model import CostStructure, Dataset, ExpertRecords
from deccaf.expert_sim import ExpertParams, error_probabilities, sample_decisions
from deccaf.hem import HemEncoder, HemModel, HemRows, build_hem_rows, train_hem
from deccaf.metrics import weighted_auc, weighted_ece
from deccaf.scorer import FAMILY_LINEAR, TrainConfig, fit


def _dataset(n=10, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        np.arange(n), rng.uniform(-0.5, 0.5, (n, 2)), rng.integers(0, 2, n),
        np.ones(n), np.ones(n, int),
    )


class TestBuildHemRows:
    def test_agreement_on_positive_gets_unit_weight(self):
        ds = Dataset([0], [[0.1, 0.2]], [1], [1.0], [1])
        rec = ExpertRecords([0], [2], [1])
        rows = build_hem_rows(ds, rec, [0.5], CostStructure(0.057))
        assert rows.targets[0] == 1.0
        assert rows.weights[0] == 1.0
        assert rows.expert_ids[0] == 2

    def test_false_positive_gets_lambda_weight(self):
        ds = Dataset([0], [[0.1, 0.2]], [0], [1.0], [1])
        rec = ExpertRecords([0], [1], [1])
        rows = build_hem_rows(ds, rec, [0.5], CostStructure(0.057))
        assert rows.targets[0] == 0.0
        assert rows.weights[0] == 0.057

    def test_empty_records_give_empty_rows(self):
        ds = _dataset()
        rec = ExpertRecords([], [], [])
        rows = build_hem_rows(ds, rec, np.zeros(len(ds)), CostStructure(1.0))
        assert len(rows) == 0

    def test_dangling_reference_rejected(self):
        ds = _dataset()
        rec = ExpertRecords([999], [1], [0])
        with pytest.raises(ValueError, match="unknown instance"):
            build_hem_rows(ds, rec, np.zeros(len(ds)), CostStructure(1.0))

    def test_features_override_replaces_raw_columns(self):
        ds = _dataset(4)
        rec = ExpertRecords([0, 2], [1, 1], [1, 0])
        pre = np.arange(8, dtype=float).reshape(4, 2)
        rows = build_hem_rows(ds, rec, np.zeros(4), CostStructure(1.0), features=pre)
        assert np.array_equal(rows.features, pre[[0, 2]])


class TestEncoder:
    def test_column_count(self):
        enc = HemEncoder(n_experts=3, n_features=2)
        # 2 features + score + 3 one-hot + (2+1)*3 interactions
        assert enc.n_columns == 2 + 1 + 3 + 9
        X = enc.encode(np.zeros((4, 2)), np.zeros(4), np.array([1, 2, 3, 1]))
        assert X.shape == (4, enc.n_columns)

    def test_expert_id_bounds(self):
        enc = HemEncoder(n_experts=2, n_features=1)
        with pytest.raises(ValueError, match="expert ids"):
            enc.encode(np.zeros((1, 1)), np.zeros(1), np.array([3]))
        with pytest.raises(ValueError, match="expert ids"):
            enc.encode(np.zeros((1, 1)), np.zeros(1), np.array([0]))

    def test_permuting_expert_ids_permutes_predictions(self):
        rng = np.random.default_rng(0)
        rows = HemRows(
            rng.uniform(-0.5, 0.5, (300, 2)), rng.random(300),
            rng.integers(1, 4, 300),
            rng.integers(0, 2, 300).astype(float), np.ones(300),
        )
        model = train_hem(rows, rows, 3, TrainConfig(max_iterations=25),
                          learning_rates=(0.2,), l2_penalties=(1.0,))
        x = rng.uniform(-0.5, 0.5, (20, 2))
        s = rng.random(20)
        cols = model.correctness_columns(x, s)
        perm = [2, 3, 1]
        for new_j, old_j in enumerate(perm, start=1):
            redirected = model.correctness_probability(x, old_j, s)
            assert np.array_equal(redirected, cols[:, old_j - 1])
            assert new_j != old_j or True


class TestCorrectnessProbability:
    def test_all_correct_history_gives_near_one(self):
        rng = np.random.default_rng(1)
        rows = HemRows(
            rng.uniform(-0.5, 0.5, (100, 2)), rng.random(100),
            rng.integers(1, 3, 100), np.ones(100), np.ones(100),
        )
        model = train_hem(rows, rows, 2, TrainConfig(max_iterations=10),
                          learning_rates=(0.2,), l2_penalties=(1.0,))
        probe = model.correctness_probability(rng.uniform(-0.5, 0.5, (50, 2)), 1, rng.random(50))
        assert (probe >= 0.99).all()

    def test_expert_id_out_of_range_rejected(self):
        rng = np.random.default_rng(1)
        rows = HemRows(
            rng.uniform(-0.5, 0.5, (50, 1)), rng.random(50),
            rng.integers(1, 3, 50), rng.integers(0, 2, 50).astype(float), np.ones(50),
        )
        model = train_hem(rows, rows, 2, TrainConfig(max_iterations=5),
                          learning_rates=(0.2,), l2_penalties=(1.0,))
        with pytest.raises(ValueError):
            model.correctness_probability(np.zeros((1, 1)), 5, 0.0)

    def test_separates_two_opposite_experts(self):
        # expert 1 is correct exactly when x > 0, expert 2 when x < 0
        rng = np.random.default_rng(7)
        n = 3000
        x = rng.uniform(-0.5, 0.5, (n, 1))
        experts = rng.integers(1, 3, n)
        targets = np.where(experts == 1, x[:, 0] > 0, x[:, 0] < 0).astype(float)
        rows = HemRows(x, np.zeros(n), experts, targets, np.ones(n))
        model = train_hem(rows, rows, 2, TrainConfig(max_iterations=40),
                          learning_rates=(0.3,), l2_penalties=(0.1,))
        xh = rng.uniform(-0.5, 0.5, (2000, 1))
        for j, want in ((1, xh[:, 0] > 0), (2, xh[:, 0] < 0)):
            probs = model.correctness_probability(xh, j, np.zeros(2000))
            assert weighted_auc(probs, want.astype(int), np.ones(2000)) >= 0.95

    def test_oracle_parity_with_known_expert_params(self):
        # decisions sampled from a known error model; the HEM should recover
        # calibrated correctness probabilities (ECE <= 0.10 per expert)
        rng = np.random.default_rng(17)
        n_per, d = 3000, 3
        team = [
            ExpertParams(1, [1.2, -0.4, 0.0], -1.0, 4.0, -1.0, 0.3),
            ExpertParams(2, [-0.8, 0.9, 0.5], -2.0, 4.0, -0.5, -0.4),
        ]
        xbar = rng.uniform(-0.5, 0.5, (2 * n_per, d))
        scores = rng.random(2 * n_per)
        labels = (rng.random(2 * n_per) < 0.35).astype(int)
        ids = np.arange(2 * n_per)
        experts = np.repeat([1, 2], n_per)
        rng.shuffle(experts)
        preds = np.empty(2 * n_per, dtype=int)
        for p in team:
            mask = experts == p.expert_id
            preds[mask] = sample_decisions(
                p, xbar[mask], labels[mask], ids[mask], scores[mask], seed=5
            )
        targets = (preds == labels).astype(float)
        rows = HemRows(xbar, scores, experts, targets, np.ones(2 * n_per))
        model = train_hem(rows, rows, 2, TrainConfig(max_iterations=60),
                          learning_rates=(0.1, 0.3), l2_penalties=(1.0,))
        # held-out probe with the true correctness probability as outcome oracle
        xh = rng.uniform(-0.5, 0.5, (4000, d))
        sh = rng.random(4000)
        yh = (rng.random(4000) < 0.35).astype(int)
        for p in team:
            p_fp, p_fn = error_probabilities(p, xh, sh)
            true_correct = np.where(yh == 0, 1 - p_fp, 1 - p_fn)
            outcomes = (rng.random(4000) < true_correct).astype(int)
            est = model.correctness_probability(xh, p.expert_id, sh)
            assert weighted_ece(est, outcomes, np.ones(4000)) <= 0.10


class TestLeaveOneExpertOut:
    def test_invariance_with_interactions_disabled_on_symmetric_blocks(self):
        # encoding regression: with duplicated per-expert blocks and no
        # interaction columns, dropping one expert's rows leaves the others'
        # fitted probabilities unchanged up to optimizer tolerance
        rng = np.random.default_rng(3)
        n_block = 150
        x = rng.uniform(-0.5, 0.5, (n_block, 2))
        t = (x[:, 0] + 0.3 * x[:, 1] > 0).astype(float)
        s = rng.random(n_block)
        blocks = 3
        feats = np.vstack([x] * blocks)
        scores = np.concatenate([s] * blocks)
        experts = np.repeat(np.arange(1, blocks + 1), n_block)
        targets = np.concatenate([t] * blocks)
        cfg = TrainConfig(family=FAMILY_LINEAR, max_iterations=800, l2_penalty=1.0)

        def fit_probs(rows_mask, n_experts):
            enc = HemEncoder(n_experts, 2, include_score=True, interactions=False)
            X = enc.encode(feats[rows_mask], scores[rows_mask], experts[rows_mask])
            scorer = fit(X, targets[rows_mask], np.ones(rows_mask.sum()), cfg)
            return HemModel(scorer, enc)

        full = fit_probs(np.ones(blocks * n_block, dtype=bool), blocks)
        dropped = fit_probs(experts != blocks, blocks)
        probe = rng.uniform(-0.5, 0.5, (100, 2))
        probe_s = rng.random(100)
        for j in (1, 2):
            a = full.correctness_probability(probe, j, probe_s)
            b = dropped.correctness_probability(probe, j, probe_s)
            assert np.max(np.abs(a - b)) <= 1e-6


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = HemRows(
            rng.uniform(-0.5, 0.5, (200, 2)), rng.random(200),
            rng.integers(1, 4, 200), rng.integers(0, 2, 200).astype(float), np.ones(200),
        )
        model = train_hem(rows, rows, 3, TrainConfig(max_iterations=15),
                          learning_rates=(0.2,), l2_penalties=(1.0,))
        path = tmp_path / "hem.model"
        model.save(path)
        back = HemModel.load(path)
        x = rng.uniform(-0.5, 0.5, (10, 2))
        s = rng.random(10)
        assert np.array_equal(
            back.correctness_columns(x, s), model.correctness_columns(x, s)
        )

    def test_checksum_rejected(self, tmp_path):
        rng = np.random.default_rng(2)
        rows = HemRows(
            rng.uniform(-0.5, 0.5, (50, 1)), rng.random(50),
            np.ones(50, dtype=int), rng.integers(0, 2, 50).astype(float), np.ones(50),
        )
        model = train_hem(rows, rows, 1, TrainConfig(max_iterations=3),
                          learning_rates=(0.2,), l2_penalties=(1.0,))
        path = tmp_path / "hem.model"
        model.save(path)
        text = path.read_text()
        path.write_text(text.replace('"n_experts": 1', '"n_experts": 2'))
        with pytest.raises(ValueError, match="checksum"):
            HemModel.load(path)
