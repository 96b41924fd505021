"""Comparison strategies: one-vs-all deferral with per-expert rejector heads,
random assignment, classifier-only and full rejection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import MODE_EQUALITY, MODE_UPPER
from .errors import InfeasibleCapacityError
from .hem import HemRows
from .scorer import Scorer, TrainConfig, select_scorer


@dataclass
class OvaModel:
    """Shared classifier plus one independently trained rejector head per
    expert, each fitted on that expert's slice of the history."""

    classifier: Scorer
    heads: list

    @property
    def n_experts(self) -> int:
        return len(self.heads)

    def head_probabilities(self, features, model_scores) -> np.ndarray:
        """(n, J+1) matrix: column 0 is the classifier's confidence in its own
        class, columns 1..J are the heads' correctness probabilities."""
        p = self.classifier.predict_proba(np.asarray(features, dtype=np.float64))
        cols = [np.maximum(p, 1.0 - p)]
        X = _head_inputs(features, model_scores)
        for head in self.heads:
            cols.append(head.predict_proba(X))
        return np.column_stack(cols)


def _head_inputs(features, model_scores) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    scores = np.asarray(model_scores, dtype=np.float64).reshape(len(features), 1)
    return np.hstack([features, scores])


def logistic_phi(z):
    """Margin logistic loss log(1 + exp(-z))."""
    return np.logaddexp(0.0, -np.asarray(z, dtype=np.float64))


def ova_surrogate(g_true, g_other, g_defer, expert_agreements) -> float:
    """One-vs-all deferral surrogate for a single binary instance.

    ``g_true``/``g_other`` are the classifier scores for the true and the
    other class, ``g_defer`` the per-expert rejector scores, and
    ``expert_agreements`` marks the experts whose prediction matched the
    label. Used as a reference metric; training decomposes per head.
    """
    g_defer = np.asarray(g_defer, dtype=np.float64)
    agree = np.asarray(expert_agreements, dtype=bool)
    total = float(logistic_phi(g_true) + logistic_phi(-g_other))
    total += float(logistic_phi(-g_defer).sum())
    total += float((logistic_phi(g_defer[agree]) - logistic_phi(-g_defer[agree])).sum())
    return total


def train_ova_heads(
    rows_train: HemRows,
    rows_val: HemRows,
    n_experts: int,
    config: TrainConfig,
    learning_rates=None,
    l2_penalties=None,
) -> list:
    """One rejector head per expert, trained on that expert's rows with the
    same cost weighting as the joint model."""
    kwargs = {}
    if learning_rates is not None:
        kwargs["learning_rates"] = learning_rates
    if l2_penalties is not None:
        kwargs["l2_penalties"] = l2_penalties
    X_tr = _head_inputs(rows_train.features, rows_train.model_scores)
    X_val = _head_inputs(rows_val.features, rows_val.model_scores)
    heads = []
    for j in range(1, n_experts + 1):
        tr = rows_train.expert_ids == j
        va = rows_val.expert_ids == j
        if not tr.any():
            raise ValueError(f"no training rows for expert {j}")
        if not va.any():
            va = tr  # degenerate validation fallback: reuse training rows
            X_v, y_v, w_v = X_tr[tr], rows_train.targets[tr], rows_train.weights[tr]
        else:
            X_v, y_v, w_v = X_val[va], rows_val.targets[va], rows_val.weights[va]
        heads.append(
            select_scorer(
                X_tr[tr], rows_train.targets[tr], rows_train.weights[tr],
                X_v, y_v, w_v, config, **kwargs,
            )
        )
    return heads


def ova_assign(
    head_probs: np.ndarray,
    capacities,
    mode: str = MODE_EQUALITY,
    order: str = "instance",
) -> np.ndarray:
    """Greedy deferral: each instance goes to the highest-probability
    decision-maker that still has capacity.

    Instances are processed in ascending position by default; ``order =
    "confidence"`` processes the most confident instances first instead (the
    greedy outcome is order-sensitive).
    """
    head_probs = np.asarray(head_probs, dtype=np.float64)
    n, K = head_probs.shape
    capacities = np.asarray(capacities, dtype=np.int64)
    total = int(capacities.sum())
    if (mode == MODE_EQUALITY and total != n) or (mode == MODE_UPPER and total < n):
        raise InfeasibleCapacityError("capacities cannot cover the batch")
    remaining = capacities.copy()
    assignment = np.full(n, -1, dtype=np.int64)
    if order == "confidence":
        sequence = np.argsort(-head_probs.max(axis=1), kind="stable")
    else:
        sequence = np.arange(n)
    for i in sequence:
        open_cols = np.flatnonzero(remaining > 0)
        k = open_cols[int(np.argmax(head_probs[i, open_cols]))]
        assignment[i] = k
        remaining[k] -= 1
    return assignment


def random_assign(n_instances: int, capacities, rng, mode: str = MODE_EQUALITY) -> np.ndarray:
    """Uniformly random capacity-respecting assignment, built by shuffling a
    multiset of decision-maker slots."""
    capacities = np.asarray(capacities, dtype=np.int64)
    total = int(capacities.sum())
    if (mode == MODE_EQUALITY and total != n_instances) or (
        mode == MODE_UPPER and total < n_instances
    ):
        raise InfeasibleCapacityError("capacities cannot cover the batch")
    slots = np.repeat(np.arange(len(capacities)), capacities)
    return rng.permutation(slots)[:n_instances].astype(np.int64)


def full_rejection(n_instances: int) -> np.ndarray:
    """Reject everything: predict the positive class on every alert."""
    return np.ones(n_instances, dtype=np.int64)


def only_classifier(classifier: Scorer, features) -> np.ndarray:
    """All final decisions made by the classifier."""
    return classifier.predict_class(features)
