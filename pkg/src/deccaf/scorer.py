"""Probabilistic binary scorers trained by weighted logistic loss.

Two learner families share one interface:

* ``linear-logistic`` - L2-regularized logistic regression fitted with
  L-BFGS on the analytic gradient; used wherever a closed-form oracle is
  wanted.
* ``boosted-stumps`` - Newton-step gradient boosting over depth-1 trees;
  the default for end-to-end runs because it captures non-linear structure.

Scores are raw reals; probabilities come from the logistic inverse link.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from . import _stump_kernels
from .errors import DegenerateTrainingError

PROB_CLIP = 1e-12

FAMILY_LINEAR = "linear-logistic"
FAMILY_STUMPS = "boosted-stumps"

_FORMAT_TAG = "deccaf-scorer-v1"


@dataclass(frozen=True)
class TrainConfig:
    family: str = FAMILY_STUMPS
    max_iterations: int = 60
    learning_rate: float = 0.2
    l2_penalty: float = 1.0
    seed: int = 0
    initial_score_offset: float = 0.0

    def __post_init__(self):
        if self.family not in (FAMILY_LINEAR, FAMILY_STUMPS):
            raise ValueError(f"unknown learner family {self.family!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.max_iterations < 1:
            raise ValueError("max iterations must be positive")
        if self.l2_penalty < 0:
            raise ValueError("L2 penalty must be non-negative")


def inverse_link(g):
    """Logistic inverse link 1 / (1 + exp(-g)), elementwise."""
    return expit(g)


def _clip(p):
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def weighted_log_loss(scores, labels, weights) -> float:
    """Weighted mean logistic loss of raw scores against binary labels.

    Probabilities are clipped to [1e-12, 1 - 1e-12] inside the logs so
    saturated scores cannot produce infinities. Weights may be zero but must
    not be negative and must not sum to zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not (scores.shape == labels.shape == weights.shape):
        raise ValueError("scores, labels and weights must have equal length")
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    # zero-weight rows are no-ops by definition; dropping them keeps that
    # exact under floating-point summation
    live = weights > 0
    if not live.any():
        raise ValueError("weights must not sum to zero")
    if not live.all():
        scores, labels, weights = scores[live], labels[live], weights[live]
    p = _clip(inverse_link(scores))
    per_row = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    return float((weights * per_row).sum() / weights.sum())


def linear_objective(theta, X, targets, weights, l2_penalty):
    """Loss and analytic gradient of the linear-logistic model.

    theta is the stacked parameter vector [coefficients..., intercept]. The
    loss is the weighted mean logistic loss plus ``l2_penalty * ||coef||^2``
    (the intercept is not penalized).
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    coef = theta[:-1]
    scores = X @ coef + theta[-1]
    wsum = weights.sum()
    p = inverse_link(scores)
    pc = _clip(p)
    loss = float(
        (weights * -(targets * np.log(pc) + (1.0 - targets) * np.log1p(-pc))).sum() / wsum
        + l2_penalty * coef @ coef
    )
    residual = weights * (p - targets) / wsum
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ residual + 2.0 * l2_penalty * coef
    grad[-1] = residual.sum()
    return loss, grad


class Scorer:
    """A trained scoring function g(x) with the logistic inverse link."""

    def __init__(self, family, dim, config, base_score, params, degenerate=False):
        self.family = family
        self.dim = int(dim)
        self.config = config
        self.base_score = float(base_score)
        self.params = params
        self.degenerate = bool(degenerate)

    def score(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[1]}")
        out = np.full(X.shape[0], self.base_score)
        if self.family == FAMILY_LINEAR and "coef" in self.params:
            z = (X - self.params["mean"]) / self.params["scale"]
            out = out + z @ self.params["coef"] + self.params["intercept"]
        elif self.family == FAMILY_STUMPS and "features" in self.params:
            feats = self.params["features"]
            thrs = self.params["thresholds"]
            left = self.params["left"]
            right = self.params["right"]
            for k in range(len(feats)):
                out += np.where(X[:, feats[k]] < thrs[k], left[k], right[k])
        return out

    def predict_proba(self, X) -> np.ndarray:
        return inverse_link(self.score(X))

    def predict_class(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    # -- persistence ---------------------------------------------------

    def _payload(self) -> dict:
        params = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.params.items()
        }
        return {
            "format": _FORMAT_TAG,
            "family": self.family,
            "dim": self.dim,
            "base_score": self.base_score,
            "degenerate": self.degenerate,
            "params": params,
            "config": asdict(self.config),
        }

    def save(self, path) -> None:
        payload = self._payload()
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(body.encode()).hexdigest()
        with open(path, "w") as fh:
            json.dump({"payload": payload, "sha256": digest}, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "Scorer":
        with open(path) as fh:
            blob = json.load(fh)
        payload = blob["payload"]
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        digest = hashlib.sha256(body.encode()).hexdigest()
        if digest != blob.get("sha256"):
            raise ValueError(f"checksum mismatch in scorer file {path}")
        if payload.get("format") != _FORMAT_TAG:
            raise ValueError(f"not a scorer file: {path}")
        return scorer_from_payload(payload)


def scorer_from_payload(payload: dict) -> Scorer:
    """Rebuild a scorer from its persisted payload dictionary."""
    params = {
        k: (np.asarray(v) if isinstance(v, list) else v)
        for k, v in payload["params"].items()
    }
    if "features" in params:
        params["features"] = params["features"].astype(np.int64)
    return Scorer(
        payload["family"],
        payload["dim"],
        TrainConfig(**payload["config"]),
        payload["base_score"],
        params,
        payload["degenerate"],
    )


def predict_class(scorer: Scorer, X) -> np.ndarray:
    """Class decision: 1 iff the predicted probability strictly exceeds 0.5
    (a score of exactly zero ties to class 0)."""
    return scorer.predict_class(X)


def _constant_scorer(dim, config, targets, weights, degenerate) -> Scorer:
    base_rate = _clip(np.average(targets, weights=weights))
    return Scorer(config.family, dim, config, logit(base_rate), {}, degenerate)


def _fit_linear(X, targets, weights, config) -> Scorer:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    base_rate = _clip(np.average(targets, weights=weights))
    theta0 = np.zeros(X.shape[1] + 1)
    theta0[-1] = logit(base_rate) + config.initial_score_offset
    res = minimize(
        linear_objective,
        theta0,
        args=(Z, targets, weights, config.l2_penalty),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": config.max_iterations, "ftol": 1e-14, "gtol": 1e-10},
    )
    params = {
        "coef": res.x[:-1],
        "intercept": float(res.x[-1]),
        "mean": mean,
        "scale": scale,
    }
    return Scorer(FAMILY_LINEAR, X.shape[1], config, 0.0, params)


def _fit_stumps(X, targets, weights, config) -> Scorer:
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    base_rate = _clip(np.average(targets, weights=weights))
    base = float(logit(base_rate) + config.initial_score_offset)
    g = np.full(n, base)
    l2 = config.l2_penalty
    feats, thrs, lefts, rights = [], [], [], []
    for _ in range(config.max_iterations):
        p = inverse_link(g)
        grad = weights * (p - targets)
        hess = weights * p * (1.0 - p)
        feat, pos, gain = _stump_kernels.best_split(xs, order, grad, hess, l2)
        if feat < 0 or not gain > 1e-12:
            break
        # Newton leaf values recomputed outside the kernel so both engines
        # produce identical models for the same chosen split.
        left_rows = order[: pos + 1, feat]
        gl = grad[left_rows].sum()
        hl = hess[left_rows].sum()
        gr = grad.sum() - gl
        hr = hess.sum() - hl
        left_val = -gl / (hl + l2 + 1e-16) * config.learning_rate
        right_val = -gr / (hr + l2 + 1e-16) * config.learning_rate
        lo = xs[pos, feat]
        hi = xs[pos + 1, feat]
        thr = 0.5 * (lo + hi)
        if not lo < thr:
            thr = hi
        g += np.where(X[:, feat] < thr, left_val, right_val)
        feats.append(int(feat))
        thrs.append(float(thr))
        lefts.append(float(left_val))
        rights.append(float(right_val))
    params = {
        "features": np.asarray(feats, dtype=np.int64),
        "thresholds": np.asarray(thrs),
        "left": np.asarray(lefts),
        "right": np.asarray(rights),
    }
    return Scorer(FAMILY_STUMPS, d, config, base, params)


def fit(X, targets, weights, config: TrainConfig) -> Scorer:
    """Train a scorer minimizing the weighted logistic loss.

    Degenerate single-class targets yield the constant scorer with a warning
    and the ``degenerate`` flag set. The returned scorer never has a higher
    training loss than the constant scorer at the weighted base rate.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not np.isfinite(X).all():
        raise DegenerateTrainingError("non-finite feature values")
    if len(targets) != X.shape[0] or len(weights) != X.shape[0]:
        raise ValueError("targets/weights length mismatch")
    if len(np.unique(targets)) < 2:
        warnings.warn("single-class targets: returning the constant scorer")
        return _constant_scorer(X.shape[1], config, targets, weights, degenerate=True)
    if config.family == FAMILY_LINEAR:
        model = _fit_linear(X, targets, weights, config)
    else:
        model = _fit_stumps(X, targets, weights, config)
    constant = _constant_scorer(X.shape[1], config, targets, weights, degenerate=False)
    if weighted_log_loss(model.score(X), targets, weights) > weighted_log_loss(
        constant.score(X), targets, weights
    ):
        return constant
    return model


DEFAULT_LEARNING_RATES = (0.05, 0.1, 0.3)
DEFAULT_L2_PENALTIES = (0.1, 1.0, 10.0)


def select_scorer(
    X_train,
    y_train,
    w_train,
    X_val,
    y_val,
    w_val,
    config: TrainConfig,
    learning_rates=DEFAULT_LEARNING_RATES,
    l2_penalties=DEFAULT_L2_PENALTIES,
    offsets=(0.0,),
) -> Scorer:
    """Fixed-grid model selection by validation weighted log-loss.

    Scans learning rate x L2 penalty x initial-score offset in a fixed order
    and keeps the first strictly-best validation loss, so selection is
    deterministic. The linear family ignores the learning rate, so its grid
    collapses to one rate.
    """
    if config.family == FAMILY_LINEAR:
        learning_rates = (config.learning_rate,)
    best = None
    best_loss = np.inf
    for off in offsets:
        for lr in learning_rates:
            for l2 in l2_penalties:
                cand_cfg = replace(
                    config, learning_rate=lr, l2_penalty=l2, initial_score_offset=off
                )
                cand = fit(X_train, y_train, w_train, cand_cfg)
                loss = weighted_log_loss(cand.score(X_val), y_val, w_val)
                if loss < best_loss:
                    best = cand
                    best_loss = loss
    return best
