"""End-to-end orchestration: synthetic data, the six-scenario grid, seeded
test variations, the data-availability ablation and report persistence.

The synthetic generator is a stand-in for a real fraud stream: heavy class
imbalance, eight equal "month" batches and a mild concept drift term in the
label logit. The true conditional probability is kept alongside the sample so
oracle tests can bypass learned models.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from ._engine import engine
from .alert_model import AlertModel, pick_threshold, train_alert_model
from .assigner import (
    AssignmentProblem,
    collate_predictions,
    correctness_matrix,
    sample_capacity_settings,
    solve,
)
from .baselines import (
    OvaModel,
    full_rejection,
    only_classifier,
    ova_assign,
    random_assign,
    train_ova_heads,
)
from .data_model import (
    MODE_EQUALITY,
    CostStructure,
    Dataset,
    ExpertRecords,
    weights_for,
)
from .errors import ConfigError
from .expert_sim import (
    PreprocessSpec,
    TeamSpec,
    error_probabilities,
    generate_team,
    sample_decisions,
)
from .hem import build_hem_rows, train_hem
from .metrics import EvaluationReport, cost_per_100, summarize, weighted_auc, weighted_ece
from .scorer import Scorer, TrainConfig, select_scorer

OUTPUT_ROOT_ENV = "DECCAF_OUTPUT_ROOT"


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a path of labels."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticDataSpec:
    n_instances: int = 200_000
    n_months: int = 8
    n_numeric: int = 9
    n_categorical: int = 3
    categorical_cardinalities: tuple = (4, 3, 5)
    prevalence_target: float = 0.011
    drift: float = 0.8
    protected_column: int = 1

    def __post_init__(self):
        if not 0 < self.prevalence_target < 0.5:
            raise ConfigError("prevalence target must be in (0, 0.5)")
        if len(self.categorical_cardinalities) != self.n_categorical:
            raise ConfigError("one cardinality per categorical feature required")
        if not 0 <= self.protected_column < self.n_numeric:
            raise ConfigError("protected column must index a numeric feature")

    @property
    def n_features(self) -> int:
        return self.n_numeric + self.n_categorical

    @property
    def numeric_cols(self) -> list:
        return list(range(self.n_numeric))

    @property
    def categorical_cols(self) -> list:
        return list(range(self.n_numeric, self.n_numeric + self.n_categorical))


def _calibrate_intercept(raw_logits, target) -> float:
    lo, hi = -30.0, 10.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(expit(raw_logits + mid).mean()) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic(spec: SyntheticDataSpec, seed: int):
    """Deterministic synthetic sample. Returns (dataset, true_probs), where
    true_probs[i] is the generating P(y=1 | x_i, month_i)."""
    rng = np.random.default_rng(seed)
    n = spec.n_instances
    months = 1 + (spec.n_months * np.arange(n)) // n
    numeric = rng.standard_normal((n, spec.n_numeric))
    numeric[:, spec.protected_column] = rng.uniform(18.0, 90.0, n)
    z = numeric.copy()
    z[:, spec.protected_column] = (z[:, spec.protected_column] - 54.0) / 20.78
    theta = rng.normal(0.0, 0.55, spec.n_numeric)
    raw = z @ theta
    cat_codes = np.empty((n, spec.n_categorical))
    for k, card in enumerate(spec.categorical_cardinalities):
        probs = rng.dirichlet(np.full(card, 3.0))
        codes = rng.choice(card, size=n, p=probs)
        effects = rng.normal(0.0, 0.7, card)
        cat_codes[:, k] = codes
        raw += effects[codes]
    # non-additive structure so depth-1 learners stay imperfect
    raw += 0.7 * z[:, 0] * z[:, 2] + 0.9 * (np.abs(z[:, 3]) - 0.7979)
    raw += spec.drift * (months - (1 + spec.n_months) / 2.0) / spec.n_months
    intercept = _calibrate_intercept(raw, spec.prevalence_target)
    true_p = expit(raw + intercept)
    labels = (rng.random(n) < true_p).astype(np.int64)
    features = np.hstack([numeric, cat_codes])
    dataset = Dataset(np.arange(n), features, labels, np.ones(n), months)
    return dataset, true_p


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScenarioConfig:
    target_fpr: float
    lam: float
    n_training_seeds: int = 5
    n_capacity_settings: int = 5
    data_fraction: float = 1.0

    def __post_init__(self):
        if not 0 < self.target_fpr < 1:
            raise ConfigError("target FPR must be in (0, 1)")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if not 0 < self.data_fraction <= 1:
            raise ConfigError("data fraction must be in (0, 1]")
        if self.n_training_seeds < 1 or self.n_capacity_settings < 1:
            raise ConfigError("need at least one seed and one capacity setting")

    @property
    def key(self) -> str:
        base = f"ar{self.target_fpr:g}_lam{self.lam:g}"
        if self.data_fraction != 1.0:
            base += f"_frac{self.data_fraction:g}"
        return base


@dataclass(frozen=True)
class RunConfig:
    data: SyntheticDataSpec = field(default_factory=SyntheticDataSpec)
    data_seed: int = 101
    master_seed: int = 2024
    n_experts: int = 9
    lambda_t: float = 0.057
    alert_fprs: tuple = (0.05, 0.15)
    lambda_multipliers: tuple = (0.2, 1.0, 5.0)
    n_training_seeds: int = 5
    n_capacity_settings: int = 5
    alert_train_months: tuple = (1, 2, 3)
    alert_val_month: int = 4
    deferral_train_months: tuple = (4, 5, 6)
    deferral_val_month: int = 7
    test_month: int = 8
    alert_rounds: int = 80
    classifier_rounds: int = 60
    hem_rounds: int = 60
    grid_learning_rates: tuple = (0.05, 0.1, 0.3)
    grid_l2_penalties: tuple = (0.1, 1.0, 10.0)
    classifier_offsets: tuple = (0.0, 0.4, 0.8, 1.2, 1.6, 2.0)
    write_assignments: bool = True

    def scenarios(self) -> list:
        return [
            ScenarioConfig(
                fpr, self.lambda_t * mult, self.n_training_seeds, self.n_capacity_settings
            )
            for fpr in self.alert_fprs
            for mult in self.lambda_multipliers
        ]

    def to_json(self) -> dict:
        blob = asdict(self)
        return blob

    @classmethod
    def from_json(cls, blob: dict) -> "RunConfig":
        blob = dict(blob)
        try:
            data = blob.pop("data", {})
            if isinstance(data, dict):
                for key in ("categorical_cardinalities",):
                    if key in data:
                        data[key] = tuple(data[key])
                data = SyntheticDataSpec(**data)
            for key in (
                "alert_fprs",
                "lambda_multipliers",
                "alert_train_months",
                "deferral_train_months",
                "grid_learning_rates",
                "grid_l2_penalties",
                "classifier_offsets",
            ):
                if key in blob:
                    blob[key] = tuple(blob[key])
            return cls(data=data, **blob)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid run configuration: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                blob = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(blob)


# ---------------------------------------------------------------------------
# scenario artifacts


@dataclass
class ScenarioData:
    """Everything tied to one alert-rate setting: the alert model, the alert
    subset over the deployment months, its splits and preprocessed features."""

    alert: AlertModel
    alerts: Dataset
    scores: np.ndarray          # alert-model probability per alert row
    true_probs: np.ndarray
    preprocess: PreprocessSpec
    xbar: np.ndarray
    train_rows: np.ndarray
    val_rows: np.ndarray
    test_rows: np.ndarray


@dataclass
class VariationRecord:
    seed_index: int
    capacity_index: int
    capacities: np.ndarray
    assignments: dict
    predictions: dict


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    report: EvaluationReport
    variations: list
    test_ids: np.ndarray
    test_labels: np.ndarray


class Pipeline:
    """Caches shared stages so the scenario grid, the ablation and the oracle
    run do not recompute data, alert models, teams or decisions."""

    def __init__(self, config: RunConfig):
        self.config = config
        self._cache: dict = {}

    # -- shared stages ---------------------------------------------------

    def dataset(self):
        if "data" not in self._cache:
            self._cache["data"] = generate_synthetic(self.config.data, self.config.data_seed)
        return self._cache["data"]

    def alert_scorer_config(self) -> TrainConfig:
        return TrainConfig(max_iterations=self.config.alert_rounds, seed=0)

    def scenario_data(self, target_fpr: float) -> ScenarioData:
        key = ("scenario_data", target_fpr)
        if key in self._cache:
            return self._cache[key]
        cfg = self.config
        dataset, true_p = self.dataset()
        if "alert_scorer" not in self._cache:
            self._cache["alert_scorer"] = train_alert_model(
                dataset, target_fpr, self.alert_scorer_config(),
                cfg.alert_train_months, cfg.alert_val_month,
            )
        base = self._cache["alert_scorer"]
        # the scorer is shared between alert-rate settings; only the
        # threshold, alert rate and recall are re-derived per target FPR
        val_mask = dataset.batches == cfg.alert_val_month
        val_probs = base.scorer.predict_proba(dataset.features[val_mask])
        val_labels = dataset.labels[val_mask]
        threshold = pick_threshold(val_probs, val_labels, target_fpr)
        flagged = val_probs >= threshold
        alert = AlertModel(
            base.scorer,
            threshold,
            target_fpr,
            float(flagged.mean()),
            float(flagged[val_labels == 1].mean()),
        )
        deploy_months = list(cfg.deferral_train_months) + [cfg.deferral_val_month, cfg.test_month]
        deploy = np.isin(dataset.batches, deploy_months)
        all_probs = alert.scores(dataset)
        rows = np.flatnonzero(deploy & (all_probs >= alert.threshold))
        alerts = dataset.subset(rows)
        scores = all_probs[rows]
        tp = true_p[rows]
        train_rows = np.flatnonzero(np.isin(alerts.batches, cfg.deferral_train_months))
        val_rows = np.flatnonzero(alerts.batches == cfg.deferral_val_month)
        test_rows = np.flatnonzero(alerts.batches == cfg.test_month)
        pre = PreprocessSpec.fit(
            alerts.features[train_rows],
            alerts.labels[train_rows],
            cfg.data.numeric_cols,
            cfg.data.categorical_cols,
            cfg.data.protected_column,
        )
        xbar = pre.transform(alerts.features)
        data = ScenarioData(alert, alerts, scores, tp, pre, xbar, train_rows, val_rows, test_rows)
        self._cache[key] = data
        return data

    # -- per-scenario models ----------------------------------------------

    def classifier(self, target_fpr: float, lam: float, data_fraction: float = 1.0,
                   seed_index: int = 0) -> Scorer:
        frac_key = None if data_fraction == 1.0 else (data_fraction, seed_index)
        key = ("classifier", target_fpr, lam, frac_key)
        if key in self._cache:
            return self._cache[key]
        cfg = self.config
        sd = self.scenario_data(target_fpr)
        cost = CostStructure(lam)
        train_rows = self._fraction_rows(target_fpr, data_fraction, seed_index)
        tr = sd.alerts.subset(train_rows)
        va = sd.alerts.subset(sd.val_rows)
        model = select_scorer(
            tr.features, tr.labels, weights_for(tr.labels, cost),
            va.features, va.labels, weights_for(va.labels, cost),
            TrainConfig(max_iterations=cfg.classifier_rounds, seed=0),
            learning_rates=cfg.grid_learning_rates,
            l2_penalties=cfg.grid_l2_penalties,
            offsets=cfg.classifier_offsets,
        )
        self._cache[key] = model
        return model

    def classifier_validation_cost(self, target_fpr: float, lam: float) -> float:
        sd = self.scenario_data(target_fpr)
        h = self.classifier(target_fpr, lam)
        va = sd.alerts.subset(sd.val_rows)
        preds = h.predict_class(va.features)
        return cost_per_100(preds, va.labels, lam) / 100.0

    def team_seed(self) -> int:
        return derive_seed(self.config.master_seed, "team")

    def team(self, target_fpr: float, lam: float):
        key = ("team", target_fpr, lam)
        if key in self._cache:
            return self._cache[key]
        cfg = self.config
        sd = self.scenario_data(target_fpr)
        cal = sd.val_rows
        spec = TeamSpec(n_experts=cfg.n_experts, seed=self.team_seed())
        team = generate_team(
            spec,
            sd.xbar[cal],
            sd.alerts.labels[cal],
            sd.scores[cal],
            lam,
            self.classifier_validation_cost(target_fpr, lam),
            cfg.data.protected_column,
        )
        self._cache[key] = team
        return team

    def decisions(self, target_fpr: float, lam: float) -> np.ndarray:
        """(n_alerts, J) decision matrix over the whole deployment window."""
        key = ("decisions", target_fpr, lam)
        if key in self._cache:
            return self._cache[key]
        sd = self.scenario_data(target_fpr)
        team = self.team(target_fpr, lam)
        cols = [
            sample_decisions(p, sd.xbar, sd.alerts.labels, sd.alerts.ids, sd.scores,
                             self.team_seed())
            for p in team
        ]
        out = np.column_stack(cols)
        self._cache[key] = out
        return out

    def history(self, target_fpr: float, seed_index: int) -> np.ndarray:
        """Uniformly random expert routing (1..J) for the history months,
        equalized across alert-rate settings by per-expert downsampling."""
        key = ("history", target_fpr, seed_index)
        if key in self._cache:
            return self._cache[key]
        cfg = self.config
        sd = self.scenario_data(target_fpr)
        hist_rows = np.concatenate([sd.train_rows, sd.val_rows])
        rng = np.random.default_rng(
            derive_seed(cfg.master_seed, "routing", target_fpr, seed_index)
        )
        experts = rng.integers(1, cfg.n_experts + 1, size=hist_rows.size)
        # equalize the per-expert record count with the smallest alert rate
        smallest = min(cfg.alert_fprs)
        if target_fpr > smallest:
            ref = self.scenario_data(smallest)
            target_count = (len(ref.train_rows) + len(ref.val_rows)) // cfg.n_experts
            keep = np.zeros(hist_rows.size, dtype=bool)
            for j in range(1, cfg.n_experts + 1):
                idx = np.flatnonzero(experts == j)
                if idx.size > target_count:
                    idx = rng.choice(idx, size=target_count, replace=False)
                keep[idx] = True
            hist_rows = hist_rows[keep]
            experts = experts[keep]
        routing = np.full(len(sd.alerts), 0, dtype=np.int64)
        routing[hist_rows] = experts
        self._cache[key] = routing
        return routing

    def _fraction_rows(self, target_fpr: float, data_fraction: float, seed_index: int):
        """Training-month alert rows available at the given data fraction."""
        sd = self.scenario_data(target_fpr)
        if data_fraction == 1.0:
            return sd.train_rows
        rng = np.random.default_rng(
            derive_seed(self.config.master_seed, "fraction", target_fpr,
                        data_fraction, seed_index)
        )
        size = max(int(round(data_fraction * sd.train_rows.size)), 1)
        return np.sort(rng.choice(sd.train_rows, size=size, replace=False))

    def _history_records(self, target_fpr, lam, seed_index, rows_subset):
        sd = self.scenario_data(target_fpr)
        routing = self.history(target_fpr, seed_index)
        decisions = self.decisions(target_fpr, lam)
        rows = rows_subset[routing[rows_subset] > 0]
        experts = routing[rows]
        preds = decisions[rows, experts - 1]
        return ExpertRecords(sd.alerts.ids[rows], experts, preds)

    def deferral_models(self, target_fpr: float, lam: float, seed_index: int,
                        data_fraction: float = 1.0):
        """(classifier, HEM, OvA heads) for one training seed."""
        key = ("models", target_fpr, lam, seed_index, data_fraction)
        if key in self._cache:
            return self._cache[key]
        cfg = self.config
        sd = self.scenario_data(target_fpr)
        cost = CostStructure(lam)
        h = self.classifier(target_fpr, lam, data_fraction, seed_index)
        train_rows = self._fraction_rows(target_fpr, data_fraction, seed_index)
        rec_train = self._history_records(target_fpr, lam, seed_index, train_rows)
        rec_val = self._history_records(target_fpr, lam, seed_index, sd.val_rows)
        rows_train = build_hem_rows(sd.alerts, rec_train, sd.scores, cost, sd.xbar)
        rows_val = build_hem_rows(sd.alerts, rec_val, sd.scores, cost, sd.xbar)
        hem_cfg = TrainConfig(max_iterations=cfg.hem_rounds, seed=seed_index)
        hem = train_hem(
            rows_train, rows_val, cfg.n_experts, hem_cfg,
            learning_rates=cfg.grid_learning_rates,
            l2_penalties=cfg.grid_l2_penalties,
        )
        heads = train_ova_heads(
            rows_train, rows_val, cfg.n_experts, hem_cfg,
            learning_rates=cfg.grid_learning_rates,
            l2_penalties=cfg.grid_l2_penalties,
        )
        models = (h, hem, OvaModel(h, heads))
        self._cache[key] = models
        return models

    # -- scenario execution ------------------------------------------------

    def capacity_settings(self, target_fpr: float, lam: float, n_settings: int):
        sd = self.scenario_data(target_fpr)
        cfg = self.config
        return sample_capacity_settings(
            sd.test_rows.size,
            cfg.n_experts + 1,
            n_settings,
            derive_seed(cfg.master_seed, "capacity", target_fpr, lam),
        )

    def run_scenario(self, scn: ScenarioConfig) -> ScenarioResult:
        cfg = self.config
        sd = self.scenario_data(scn.target_fpr)
        lam = scn.lam
        cost = CostStructure(lam)
        decisions = self.decisions(scn.target_fpr, lam)
        test = sd.alerts.subset(sd.test_rows)
        test_scores = sd.scores[sd.test_rows]
        test_xbar = sd.xbar[sd.test_rows]
        test_decisions = decisions[sd.test_rows]
        caps = self.capacity_settings(scn.target_fpr, lam, scn.n_capacity_settings)

        fr_cost = cost_per_100(full_rejection(len(test)), test.labels, lam)
        costs = {"deccaf": [], "ova": [], "random": [], "fr": [], "oc": []}
        variations = []
        hem_eces, hem_aucs, ova_eces, ova_aucs = [], [], [], []
        h_probs_ref = None
        for s in range(scn.n_training_seeds):
            h, hem, ova = self.deferral_models(
                scn.target_fpr, lam, s, scn.data_fraction
            )
            h_classes = h.predict_class(test.features)
            oc_cost = cost_per_100(only_classifier(h, test.features), test.labels, lam)
            prob = correctness_matrix(h, hem, test, test_scores, test_xbar)
            head_probs = ova.head_probabilities(test.features, test_scores)
            if h_probs_ref is None:
                h_probs_ref = h.predict_proba(test.features)
            e, a = _per_expert_metrics(
                hem.correctness_columns(test_xbar, test_scores),
                test_decisions, test.labels, lam,
            )
            hem_eces.append(e)
            hem_aucs.append(a)
            e, a = _per_expert_metrics(
                head_probs[:, 1:], test_decisions, test.labels, lam
            )
            ova_eces.append(e)
            ova_aucs.append(a)
            for v, cap in enumerate(caps):
                sol = solve(AssignmentProblem(prob, cap, MODE_EQUALITY))
                deccaf_pred = collate_predictions(sol.assignment, h_classes, test_decisions)
                ova_asg = ova_assign(head_probs, cap, MODE_EQUALITY)
                ova_pred = collate_predictions(ova_asg, h_classes, test_decisions)
                rng = np.random.default_rng(
                    derive_seed(cfg.master_seed, "random", scn.key, s, v)
                )
                rnd_asg = random_assign(len(test), cap, rng, MODE_EQUALITY)
                rnd_pred = collate_predictions(rnd_asg, h_classes, test_decisions)
                costs["deccaf"].append(cost_per_100(deccaf_pred, test.labels, lam))
                costs["ova"].append(cost_per_100(ova_pred, test.labels, lam))
                costs["random"].append(cost_per_100(rnd_pred, test.labels, lam))
                costs["fr"].append(fr_cost)
                costs["oc"].append(oc_cost)
                variations.append(
                    VariationRecord(
                        s, v, cap,
                        {"deccaf": sol.assignment, "ova": ova_asg, "random": rnd_asg},
                        {"deccaf": deccaf_pred, "ova": ova_pred, "random": rnd_pred},
                    )
                )
        w_test = weights_for(test.labels, cost)
        model_metrics = {
            "classifier_h": {
                "ece": weighted_ece(h_probs_ref, test.labels, w_test),
                "roc_auc": weighted_auc(h_probs_ref, test.labels, w_test),
            },
            "hem": {
                "per_expert_ece_mean": float(np.mean(hem_eces)),
                "per_expert_auc_mean": float(np.mean(hem_aucs)),
            },
            "ova": {
                "per_expert_ece_mean": float(np.mean(ova_eces)),
                "per_expert_auc_mean": float(np.mean(ova_aucs)),
            },
        }
        scenario = {
            "target_fpr": scn.target_fpr,
            "lambda": lam,
            "lambda_t": cfg.lambda_t,
            "alert_rate": sd.alert.alert_rate,
            "alert_threshold": sd.alert.threshold,
            "data_fraction": scn.data_fraction,
            "n_test_alerts": int(sd.test_rows.size),
        }
        metadata = {
            "engine": engine(),
            "n_variations": scn.n_training_seeds * scn.n_capacity_settings,
            "n_training_seeds": scn.n_training_seeds,
            "n_capacity_settings": scn.n_capacity_settings,
            "validation_recall": sd.alert.validation_recall,
        }
        report = summarize(costs, scenario, "deccaf", model_metrics, metadata)
        return ScenarioResult(scn, report, variations, test.ids.copy(), test.labels.copy())

    # -- oracle deferral ----------------------------------------------------

    def oracle_correctness_matrix(self, target_fpr: float, lam: float, rows,
                                  h_classes) -> np.ndarray:
        """Perfect-model limit of the correctness estimates: the generating
        P(y=1|x) reweighted by the cost structure, mixed with the experts'
        true error probabilities."""
        sd = self.scenario_data(target_fpr)
        team = self.team(target_fpr, lam)
        p = sd.true_probs[rows]
        pt = p / (p + lam * (1.0 - p))
        col0 = np.where(h_classes == 1, pt, 1.0 - pt)
        cols = [col0]
        for params in team:
            p_fp, p_fn = error_probabilities(params, sd.xbar[rows], sd.scores[rows])
            cols.append((1.0 - pt) * (1.0 - p_fp) + pt * (1.0 - p_fn))
        return np.column_stack(cols)

    def run_oracle_variations(self, target_fpr: float, lam: float,
                              n_capacity_settings: int, seed_index: int = 0):
        """Capacity-constrained deferral fed the true correctness matrix,
        with the standard baselines on the same batches. Returns per-variation
        predictions for every strategy."""
        sd = self.scenario_data(target_fpr)
        decisions = self.decisions(target_fpr, lam)
        test = sd.alerts.subset(sd.test_rows)
        test_decisions = decisions[sd.test_rows]
        h, hem, ova = self.deferral_models(target_fpr, lam, seed_index)
        h_classes = h.predict_class(test.features)
        oracle_prob = self.oracle_correctness_matrix(target_fpr, lam, sd.test_rows, h_classes)
        head_probs = ova.head_probabilities(test.features, sd.scores[sd.test_rows])
        caps = self.capacity_settings(target_fpr, lam, n_capacity_settings)
        out = []
        for v, cap in enumerate(caps):
            sol = solve(AssignmentProblem(oracle_prob, cap, MODE_EQUALITY))
            rng = np.random.default_rng(
                derive_seed(self.config.master_seed, "oracle-random", target_fpr, lam, v)
            )
            preds = {
                "oracle_deccaf": collate_predictions(sol.assignment, h_classes, test_decisions),
                "ova": collate_predictions(
                    ova_assign(head_probs, cap, MODE_EQUALITY), h_classes, test_decisions
                ),
                "random": collate_predictions(
                    random_assign(len(test), cap, rng, MODE_EQUALITY),
                    h_classes, test_decisions,
                ),
                "fr": full_rejection(len(test)),
                "oc": only_classifier(h, test.features),
            }
            out.append((cap, sol, preds))
        return out, test.labels, oracle_prob


def _per_expert_metrics(prob_cols, decisions, labels, lam):
    """Mean per-expert ECE and ROC-AUC of correctness estimates under the
    cost-reweighted distribution."""
    cost = CostStructure(lam)
    w = weights_for(labels, cost)
    eces, aucs = [], []
    for j in range(prob_cols.shape[1]):
        outcome = (decisions[:, j] == labels).astype(np.int64)
        eces.append(weighted_ece(prob_cols[:, j], outcome, w))
        if 0 < outcome.sum() < len(outcome):
            aucs.append(weighted_auc(prob_cols[:, j], outcome, w))
    return float(np.mean(eces)), float(np.mean(aucs)) if aucs else float("nan")


# ---------------------------------------------------------------------------
# top-level runs


def output_root(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "deccaf-output"))


def write_scenario_outputs(result: ScenarioResult, out_dir: Path, write_assignments: bool):
    out_dir.mkdir(parents=True, exist_ok=True)
    result.report.save(out_dir / "report.json")
    if not write_assignments:
        return
    header = "instance_id,decision_maker,prediction\n"
    for rec in result.variations:
        for strategy, assignment in rec.assignments.items():
            preds = rec.predictions[strategy]
            path = out_dir / f"assignments_{strategy}_s{rec.seed_index}_c{rec.capacity_index}.csv"
            with open(path, "w") as fh:
                fh.write(header)
                for iid, dm, pr in zip(result.test_ids, assignment, preds):
                    fh.write(f"{int(iid)},{int(dm)},{int(pr)}\n")


def run_all(config: RunConfig, out_dir=None) -> dict:
    """Execute the whole scenario grid, write one report per scenario plus a
    top-level summary, and return the in-memory results keyed by scenario."""
    root = output_root(out_dir)
    pipeline = Pipeline(config)
    results = {}
    for scn in config.scenarios():
        result = pipeline.run_scenario(scn)
        results[scn.key] = result
        write_scenario_outputs(result, root / scn.key, config.write_assignments)
    summary = {
        "scenarios": {
            key: {
                "mean_cost_per_100": {
                    name: s.mean for name, s in res.report.strategies.items()
                },
                "win_rates": res.report.win_rates,
            }
            for key, res in results.items()
        },
        "config": config.to_json(),
        "engine": engine(),
    }
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return results


def run_ablation(pipeline: Pipeline, fractions=(0.25, 0.5, 1.0)) -> dict:
    """Data-availability ablation at the reference cost ratio: one report per
    (alert rate, training-data fraction)."""
    cfg = pipeline.config
    results = {}
    for fpr in cfg.alert_fprs:
        for frac in fractions:
            scn = ScenarioConfig(
                fpr, cfg.lambda_t, cfg.n_training_seeds, cfg.n_capacity_settings, frac
            )
            results[scn.key] = pipeline.run_scenario(scn)
    return results
