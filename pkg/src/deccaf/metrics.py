"""Evaluation under the cost-reweighted distribution: misclassification cost
per 100 instances, weighted calibration error and ROC-AUC, and cross-variation
summaries with confidence intervals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Binomial-significance bands from the win-rate comparison over 25 variations:
# values in SIGNIFICANT_BAND mean the first method is significantly better,
# values in INCONCLUSIVE_BAND do not separate the methods.
SIGNIFICANT_BAND = (0.68, 1.0)
INCONCLUSIVE_BAND = (0.28, 0.68)

DEFAULT_ECE_BINS = 10


def cost_per_100(predictions, labels, lam: float) -> float:
    """100 x mean of (lambda per false positive, 1 per false negative)."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    fp = (labels == 0) & (predictions == 1)
    fn = (labels == 1) & (predictions == 0)
    return 100.0 * float(np.mean(lam * fp + 1.0 * fn))


def weighted_ece(probabilities, outcomes, weights=None, n_bins: int = DEFAULT_ECE_BINS) -> float:
    """Expected calibration error over equal-width bins, with every row
    contributing its weight to both the bin mass and the bin means."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.float64)
    if probabilities.size == 0:
        raise ValueError("empty input")
    if probabilities.min() < 0 or probabilities.max() > 1:
        raise ValueError("probabilities must lie in [0, 1]")
    if weights is None:
        weights = np.ones_like(probabilities)
    weights = np.asarray(weights, dtype=np.float64)
    bins = np.minimum((probabilities * n_bins).astype(np.int64), n_bins - 1)
    total = weights.sum()
    ece = 0.0
    for b in range(n_bins):
        mask = bins == b
        wb = weights[mask].sum()
        if wb == 0:
            continue
        mean_out = float((weights[mask] * outcomes[mask]).sum() / wb)
        mean_prob = float((weights[mask] * probabilities[mask]).sum() / wb)
        ece += wb / total * abs(mean_out - mean_prob)
    return float(ece)


def weighted_auc(scores, outcomes, weights=None) -> float:
    """Weighted probability that a random positive outscores a random
    negative, ties counted half; weights multiply pair contributions."""
    scores = np.asarray(scores, dtype=np.float64)
    outcomes = np.asarray(outcomes)
    if weights is None:
        weights = np.ones_like(scores)
    weights = np.asarray(weights, dtype=np.float64)
    pos = outcomes == 1
    neg = ~pos
    if not pos.any() or not neg.any():
        raise ValueError("AUC undefined: both outcome classes required")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    w = weights[order]
    is_pos = pos[order]
    w_pos = np.where(is_pos, w, 0.0)
    w_neg = np.where(is_pos, 0.0, w)
    # Group rows sharing a score value; within a group positives and
    # negatives tie (weight 1/2), below-group negatives are clean wins.
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(s)]])
    cum_neg = np.concatenate([[0.0], np.cumsum(w_neg)])
    total = 0.0
    for a, b in zip(starts, ends):
        gp = w_pos[a:b].sum()
        if gp == 0:
            continue
        below = cum_neg[a]
        same = cum_neg[b] - cum_neg[a]
        total += gp * (below + 0.5 * same)
    return float(total / (w_pos.sum() * w_neg.sum()))


@dataclass
class StrategySummary:
    mean: float
    ci95: float
    n: int
    costs: list

    def to_json(self) -> dict:
        return {"mean": self.mean, "ci95": self.ci95, "n": self.n, "costs": self.costs}


@dataclass
class EvaluationReport:
    """Per-scenario results: mean cost per 100 with 95% CIs per strategy,
    win rates of the flow-based deferral against each baseline, and model
    calibration/ranking metrics."""

    scenario: dict
    strategies: dict
    win_rates: dict
    model_metrics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "strategies": {k: v.to_json() for k, v in self.strategies.items()},
            "win_rates": self.win_rates,
            "model_metrics": self.model_metrics,
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def summarize(
    variation_costs: dict,
    scenario: dict | None = None,
    reference: str = "deccaf",
    model_metrics: dict | None = None,
    metadata: dict | None = None,
) -> EvaluationReport:
    """Aggregate per-variation costs into means with normal-approximation 95%
    confidence intervals (1.96 * sd / sqrt(n), population sd) and win rates of
    the reference strategy against every other."""
    strategies = {}
    for name, costs in variation_costs.items():
        costs = np.asarray(costs, dtype=np.float64)
        if costs.size < 2:
            raise ValueError("confidence intervals need at least 2 variations")
        mean = float(costs.mean())
        ci = float(1.96 * costs.std() / np.sqrt(costs.size))
        strategies[name] = StrategySummary(mean, ci, int(costs.size), costs.tolist())
    win_rates = {}
    if reference in variation_costs:
        ref = np.asarray(variation_costs[reference], dtype=np.float64)
        for name, costs in variation_costs.items():
            if name == reference:
                continue
            other = np.asarray(costs, dtype=np.float64)
            win_rates[f"{reference}_vs_{name}"] = float(np.mean(ref < other))
    meta = {
        "significant_band": list(SIGNIFICANT_BAND),
        "inconclusive_band": list(INCONCLUSIVE_BAND),
        "ci_method": "normal approximation; may be unreliable at small n",
    }
    if metadata:
        meta.update(metadata)
    return EvaluationReport(
        scenario or {}, strategies, win_rates, model_metrics or {}, meta
    )


def report_to_csv_rows(report: EvaluationReport) -> list:
    """Flatten a report into plot-ready rows (scenario, strategy, variation,
    cost)."""
    rows = []
    key = json.dumps(report.scenario, sort_keys=True)
    for name, summary in sorted(report.strategies.items()):
        for v, cost in enumerate(summary.costs):
            rows.append({"scenario": key, "strategy": name, "variation": v, "cost": cost})
    return rows
