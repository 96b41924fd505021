"""Human expertise model: one scorer over (features, expert index, model
score) predicting the probability that a given expert decides correctly.

A single joint model is used for the whole team because per-expert data is
scarce in the one-prediction-per-instance regime; the expert index enters as
a one-hot block, optionally crossed with the features so the model can learn
expert-specific feature responses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data_model import CostStructure, Dataset, ExpertRecords, weights_for
from .scorer import Scorer, TrainConfig, scorer_from_payload, select_scorer


@dataclass(frozen=True)
class HemEncoder:
    """Row encoding for HEM training and inference.

    Columns: base features, then the model-score channel (if enabled), then a
    one-hot expert block, then feature-by-expert interaction columns (if
    enabled). Interactions let an additive learner fit per-expert feature
    responses.
    """

    n_experts: int
    n_features: int
    include_score: bool = True
    interactions: bool = True

    @property
    def n_columns(self) -> int:
        base = self.n_features + (1 if self.include_score else 0)
        cols = base + self.n_experts
        if self.interactions:
            cols += base * self.n_experts
        return cols

    def encode(self, features, model_scores, expert_ids) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        expert_ids = np.asarray(expert_ids, dtype=np.int64)
        if expert_ids.min(initial=1) < 1 or expert_ids.max(initial=1) > self.n_experts:
            raise ValueError(f"expert ids must lie in 1..{self.n_experts}")
        n = features.shape[0]
        if self.include_score:
            base = np.hstack([features, np.asarray(model_scores, dtype=np.float64).reshape(n, 1)])
        else:
            base = features
        onehot = np.zeros((n, self.n_experts))
        onehot[np.arange(n), expert_ids - 1] = 1.0
        blocks = [base, onehot]
        if self.interactions:
            inter = base[:, :, None] * onehot[:, None, :]
            blocks.append(inter.reshape(n, -1))
        return np.hstack(blocks)


@dataclass
class HemRows:
    """Training rows: one per observed expert decision."""

    features: np.ndarray
    model_scores: np.ndarray
    expert_ids: np.ndarray
    targets: np.ndarray   # 1 when the expert agreed with the label
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


def build_hem_rows(
    dataset: Dataset,
    records: ExpertRecords,
    model_scores,
    cost: CostStructure,
    features=None,
) -> HemRows:
    """One row per expert record; the target marks whether the prediction
    matched the label, the weight is the instance misclassification cost.

    ``features`` overrides the raw dataset features (normally with their
    preprocessed version); ``model_scores`` is aligned with dataset rows.
    """
    if features is None:
        features = dataset.features
    features = np.asarray(features, dtype=np.float64)
    model_scores = np.asarray(model_scores, dtype=np.float64)
    row_of = dataset.row_of()
    rows = np.empty(len(records), dtype=np.int64)
    for k, iid in enumerate(records.instance_ids):
        row = row_of.get(int(iid))
        if row is None:
            raise ValueError(f"expert record references unknown instance {int(iid)}")
        rows[k] = row
    labels = dataset.labels[rows]
    targets = (records.predictions == labels).astype(np.float64)
    weights = weights_for(labels, cost)
    return HemRows(
        features[rows], model_scores[rows], records.expert_ids.copy(), targets, weights
    )


class HemModel:
    """Trained HEM plus its row encoder."""

    _FORMAT = "deccaf-hem-v1"

    def __init__(self, scorer: Scorer, encoder: HemEncoder):
        self.scorer = scorer
        self.encoder = encoder

    def correctness_probability(self, features, expert_id, model_score) -> np.ndarray:
        """P(expert decides correctly) for the row encoding of
        (features, expert index, model score)."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        n = features.shape[0]
        ids = np.full(n, int(expert_id)) if np.isscalar(expert_id) else np.asarray(expert_id)
        scores = (
            np.full(n, float(model_score)) if np.isscalar(model_score)
            else np.asarray(model_score, dtype=np.float64)
        )
        X = self.encoder.encode(features, scores, ids)
        return self.scorer.predict_proba(X)

    def correctness_columns(self, features, model_scores) -> np.ndarray:
        """(n, J) matrix of correctness probabilities, one column per expert."""
        cols = [
            self.correctness_probability(features, j, model_scores)
            for j in range(1, self.encoder.n_experts + 1)
        ]
        return np.column_stack(cols)

    def save(self, path) -> None:
        payload = {
            "format": self._FORMAT,
            "encoder": asdict(self.encoder),
            "scorer": self.scorer._payload(),
        }
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(body.encode()).hexdigest()
        with open(path, "w") as fh:
            json.dump({"payload": payload, "sha256": digest}, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "HemModel":
        with open(path) as fh:
            blob = json.load(fh)
        payload = blob["payload"]
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        if hashlib.sha256(body.encode()).hexdigest() != blob.get("sha256"):
            raise ValueError(f"checksum mismatch in HEM file {path}")
        if payload.get("format") != cls._FORMAT:
            raise ValueError(f"not a HEM file: {path}")
        scorer = scorer_from_payload(payload["scorer"])
        return cls(scorer, HemEncoder(**payload["encoder"]))


def train_hem(
    rows_train: HemRows,
    rows_val: HemRows,
    n_experts: int,
    config: TrainConfig,
    include_score: bool = True,
    interactions: bool = True,
    learning_rates=None,
    l2_penalties=None,
) -> HemModel:
    """Grid-select a scorer on the encoded rows by validation weighted loss."""
    encoder = HemEncoder(n_experts, rows_train.features.shape[1], include_score, interactions)
    X_tr = encoder.encode(rows_train.features, rows_train.model_scores, rows_train.expert_ids)
    X_val = encoder.encode(rows_val.features, rows_val.model_scores, rows_val.expert_ids)
    kwargs = {}
    if learning_rates is not None:
        kwargs["learning_rates"] = learning_rates
    if l2_penalties is not None:
        kwargs["l2_penalties"] = l2_penalties
    scorer = select_scorer(
        X_tr, rows_train.targets, rows_train.weights,
        X_val, rows_val.targets, rows_val.weights,
        config, **kwargs,
    )
    return HemModel(scorer, encoder)
