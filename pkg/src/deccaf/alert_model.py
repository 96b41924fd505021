"""Upstream alert classifier: threshold selection at a target validation FPR,
the implied cost ratio, and alert filtering."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data_model import Dataset
from .scorer import Scorer, TrainConfig, scorer_from_payload, select_scorer

_FORMAT_TAG = "deccaf-alert-v1"


@dataclass
class AlertModel:
    scorer: Scorer
    threshold: float
    target_fpr: float
    alert_rate: float
    validation_recall: float = float("nan")

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly inside (0, 1)")

    def scores(self, dataset: Dataset) -> np.ndarray:
        """Model probability for every instance (the score shown to experts)."""
        return self.scorer.predict_proba(dataset.features)

    def summary(self) -> dict:
        return {
            "threshold": self.threshold,
            "lambda_t": lambda_from_threshold(self.threshold),
            "alert_rate": self.alert_rate,
            "validation_recall": self.validation_recall,
        }

    def save(self, path) -> None:
        payload = {
            "format": _FORMAT_TAG,
            "threshold": self.threshold,
            "target_fpr": self.target_fpr,
            "alert_rate": self.alert_rate,
            "validation_recall": self.validation_recall,
            "scorer": self.scorer._payload(),
        }
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(body.encode()).hexdigest()
        with open(path, "w") as fh:
            json.dump({"payload": payload, "sha256": digest}, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "AlertModel":
        with open(path) as fh:
            blob = json.load(fh)
        payload = blob["payload"]
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        if hashlib.sha256(body.encode()).hexdigest() != blob.get("sha256"):
            raise ValueError(f"checksum mismatch in alert model file {path}")
        if payload.get("format") != _FORMAT_TAG:
            raise ValueError(f"not an alert model file: {path}")
        return cls(
            scorer_from_payload(payload["scorer"]),
            payload["threshold"],
            payload["target_fpr"],
            payload["alert_rate"],
            payload["validation_recall"],
        )


def pick_threshold(scores, labels, target_fpr: float) -> float:
    """Smallest observed score value whose flag rule (score >= t) keeps the
    empirical FPR on label-0 instances at or below the target.

    When no observed value satisfies the target (target below 1/n_neg), the
    threshold moves just above the largest negative score so that nothing is
    flagged among negatives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    neg = scores[labels == 0]
    if neg.size == 0:
        raise ValueError("need at least one negative-label instance")
    neg_sorted = np.sort(neg)
    candidates = np.unique(neg_sorted)
    # FPR at candidate t: fraction of negatives with score >= t.
    counts_below = np.searchsorted(neg_sorted, candidates, side="left")
    fpr = (neg.size - counts_below) / neg.size
    ok = np.flatnonzero(fpr <= target_fpr)
    if ok.size:
        return float(candidates[ok[0]])
    return float(np.nextafter(neg_sorted[-1], 1.0))


def lambda_from_threshold(t: float) -> float:
    """Cost ratio implied by an optimal-decision threshold: t / (1 - t)."""
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {t}")
    return t / (1.0 - t)


def filter_alerts(model: AlertModel, dataset: Dataset) -> Dataset:
    """Sub-dataset of instances flagged by the alert model (score >= threshold),
    preserving ids, weights and batches."""
    return dataset.subset(model.scores(dataset) >= model.threshold)


def train_alert_model(
    dataset: Dataset,
    target_fpr: float,
    config: TrainConfig,
    train_batches,
    val_batch: int,
    offsets=(0.0,),
) -> AlertModel:
    """Fit the alert scorer on the early batches and pick its threshold on the
    validation batch. The alert model is trained on the plain (unweighted)
    logistic loss; cost weighting only enters downstream."""
    train_mask = np.isin(dataset.batches, np.asarray(train_batches))
    val_mask = dataset.batches == val_batch
    if not train_mask.any() or not val_mask.any():
        raise ValueError("empty train or validation split for the alert model")
    ones_tr = np.ones(int(train_mask.sum()))
    ones_val = np.ones(int(val_mask.sum()))
    model = select_scorer(
        dataset.features[train_mask],
        dataset.labels[train_mask],
        ones_tr,
        dataset.features[val_mask],
        dataset.labels[val_mask],
        ones_val,
        config,
        offsets=offsets,
    )
    val_probs = model.predict_proba(dataset.features[val_mask])
    val_labels = dataset.labels[val_mask]
    threshold = pick_threshold(val_probs, val_labels, target_fpr)
    flagged = val_probs >= threshold
    alert_rate = float(flagged.mean())
    pos = val_labels == 1
    recall = float(flagged[pos].mean()) if pos.any() else float("nan")
    return AlertModel(model, threshold, target_fpr, alert_rate, recall)
