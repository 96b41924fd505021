"""Synthetic expert teams with instance-dependent error probabilities.

Each expert flips the true label with a probability driven by a normalized
linear response over preprocessed features and the upstream model score:

    p_fp(x) = sigmoid(beta0 - alpha * u(x))      on negatives
    p_fn(x) = sigmoid(beta1 + alpha * u(x))      on positives
    u(x)    = (w . xbar + w_model * m(x)) / sqrt(w . w + w_model^2)

Feature weights come from a spike-and-slab prior; the intercepts beta0/beta1
are calibrated by bisection so each expert hits a sampled expected-cost target
on a calibration split.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z):
    # wrap-around is the point: modular 64-bit mixing
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def keyed_uniforms(seed: int, stream: int, ids) -> np.ndarray:
    """Deterministic uniforms in [0, 1) keyed by (seed, stream, instance id).

    Counter-based, so the draw for an instance does not depend on which other
    instances are present; decisions regenerate identically from a stored
    seed on any subset of the data.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN * np.uint64(stream + 1))
        z = _mix64(ids * _GOLDEN + base)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0**-53)


# ---------------------------------------------------------------------------
# feature preprocessing


class PreprocessSpec:
    """Quantile map for numeric features, prevalence-ordered target encoding
    for categorical ones. Numeric outputs live in [-0.5, 0.5]; categorical
    outputs are zero-mean over the fitting split."""

    def __init__(self, numeric_cols, categorical_cols, protected_column,
                 numeric_sorted, cat_maps, cat_defaults):
        self.numeric_cols = list(numeric_cols)
        self.categorical_cols = list(categorical_cols)
        self.protected_column = int(protected_column)
        self.numeric_sorted = numeric_sorted      # col -> sorted fit values
        self.cat_maps = cat_maps                  # col -> (raw values, encoded values)
        self.cat_defaults = cat_defaults          # col -> encoding for unseen categories

    @classmethod
    def fit(cls, features, labels, numeric_cols, categorical_cols, protected_column):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        numeric_sorted = {}
        for c in numeric_cols:
            numeric_sorted[c] = np.sort(features[:, c])
        cat_maps = {}
        cat_defaults = {}
        for c in categorical_cols:
            col = features[:, c]
            cats = np.unique(col)
            prevalence = np.array([labels[col == v].mean() for v in cats])
            # ascending target prevalence; ties broken by ascending raw value
            rank = np.argsort(prevalence, kind="stable")
            n_cats = len(cats)
            codes = np.empty(n_cats)
            codes[rank] = np.arange(n_cats) / n_cats
            code_of_row = codes[np.searchsorted(cats, col)]
            shift = code_of_row.mean()
            cat_maps[c] = (cats, codes - shift)
            cat_defaults[c] = 0.0 / n_cats - shift
        return cls(numeric_cols, categorical_cols, protected_column,
                   numeric_sorted, cat_maps, cat_defaults)

    def transform(self, features) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        out = features.copy()
        for c in self.numeric_cols:
            ref = self.numeric_sorted[c]
            rank = np.searchsorted(ref, features[:, c], side="right")
            out[:, c] = rank / (len(ref) + 1) - 0.5
        for c in self.categorical_cols:
            raw, enc = self.cat_maps[c]
            idx = np.searchsorted(raw, features[:, c])
            idx = np.clip(idx, 0, len(raw) - 1)
            hit = raw[idx] == features[:, c]
            if not hit.all():
                warnings.warn(f"unseen categories in column {c}; using encoding 0")
            out[:, c] = np.where(hit, enc[idx], self.cat_defaults[c])
        return out

    def to_json(self) -> dict:
        return {
            "numeric_cols": self.numeric_cols,
            "categorical_cols": self.categorical_cols,
            "protected_column": self.protected_column,
            "numeric_sorted": {str(c): v.tolist() for c, v in self.numeric_sorted.items()},
            "cat_maps": {
                str(c): [raw.tolist(), enc.tolist()] for c, (raw, enc) in self.cat_maps.items()
            },
            "cat_defaults": {str(c): v for c, v in self.cat_defaults.items()},
        }

    @classmethod
    def from_json(cls, blob: dict) -> "PreprocessSpec":
        return cls(
            blob["numeric_cols"],
            blob["categorical_cols"],
            blob["protected_column"],
            {int(c): np.asarray(v) for c, v in blob["numeric_sorted"].items()},
            {int(c): (np.asarray(p[0]), np.asarray(p[1])) for c, p in blob["cat_maps"].items()},
            {int(c): float(v) for c, v in blob["cat_defaults"].items()},
        )


# ---------------------------------------------------------------------------
# expert parameterization


@dataclass
class ExpertParams:
    expert_id: int
    w: np.ndarray
    w_model: float
    alpha: float
    beta0: float
    beta1: float
    target_cost: float = float("nan")
    target_fpr: float = float("nan")
    target_fnr: float = float("nan")

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not np.sqrt(self.w @ self.w + self.w_model**2) > 0:
            raise ValueError("normalization denominator must be positive")


@dataclass
class TeamSpec:
    n_experts: int = 9
    seed: int = 0
    spike_prob: float = 0.3          # probability a feature weight is non-zero
    slab_std: float = 1.0
    w_model_mean: float = -2.0
    w_model_std: float = 0.5
    w_protected_mean: float = -1.0
    w_protected_std: float = 0.1
    alpha_mean: float = 4.0
    alpha_std: float = 0.2
    cost_spread: float = 0.2         # std of the cost target, relative to the classifier cost
    cost_cap: float = 0.7            # cap relative to the reject-all cost
    fnr_range: tuple = (0.05, 0.95)
    fpr_bounds: tuple = (0.01, 0.99)

    def __post_init__(self):
        if self.n_experts < 1:
            raise ValueError("need at least one expert")


def normalized_response(w, w_model, xbar, model_scores) -> np.ndarray:
    """u(x): the expert's normalized linear response."""
    w = np.asarray(w, dtype=np.float64)
    denom = np.sqrt(w @ w + w_model**2)
    if not denom > 0:
        raise ValueError("normalization denominator is zero")
    return (np.asarray(xbar) @ w + w_model * np.asarray(model_scores)) / denom


def error_probabilities(params: ExpertParams, xbar, model_scores):
    """Per-instance (p_fp, p_fn) for one expert."""
    u = normalized_response(params.w, params.w_model, xbar, model_scores)
    p_fp = expit(params.beta0 - params.alpha * u)
    p_fn = expit(params.beta1 + params.alpha * u)
    return p_fp, p_fn


def expected_cost(p_fp_vec, p_fn_vec, labels, lam: float) -> float:
    """Mean misclassification cost implied by the error probabilities:
    (1/N) sum of lambda * p_fp on negatives and p_fn on positives."""
    p_fp_vec = np.asarray(p_fp_vec, dtype=np.float64)
    p_fn_vec = np.asarray(p_fn_vec, dtype=np.float64)
    labels = np.asarray(labels)
    if not (len(p_fp_vec) == len(p_fn_vec) == len(labels)):
        raise ValueError("length mismatch")
    neg = labels == 0
    return float(np.mean(np.where(neg, lam * p_fp_vec, p_fn_vec)))


def target_fpr_from_cost(T: float, fnr: float, lam: float, prevalence: float) -> float:
    """FPR on the iso-cost line for a target cost T at the given FNR:
    T / (lam (1-p)) - p / (lam (1-p)) * FNR. Range checking is the caller's."""
    scale = lam * (1.0 - prevalence)
    return T / scale - prevalence / scale * fnr


def _rate(beta: float, alpha: float, u: np.ndarray, which: str) -> float:
    if which == "fp":
        return float(expit(beta - alpha * u).mean())
    if which == "fn":
        return float(expit(beta + alpha * u).mean())
    raise ValueError(f"which must be 'fp' or 'fn', got {which!r}")


def solve_beta(
    target_rate: float,
    alpha: float,
    u: np.ndarray,
    which: str,
    bracket=(-40.0, 40.0),
    tol: float = 1e-6,
    max_iter: int = 200,
) -> float:
    """Intercept beta whose mean error rate over the calibration responses u
    equals the target within ``tol``. The rate is a mean of sigmoids, strictly
    increasing in beta, so bisection over the bracket always converges."""
    u = np.asarray(u, dtype=np.float64)
    if u.size == 0:
        raise ValueError("empty calibration split for the requested label")
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target rate must be in (0, 1)")
    lo, hi = bracket
    r_lo = _rate(lo, alpha, u, which)
    r_hi = _rate(hi, alpha, u, which)
    assert r_lo <= target_rate <= r_hi, "target escaped the sigmoid bracket"
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = _rate(mid, alpha, u, which)
        if abs(r - target_rate) <= tol:
            return mid
        if r < target_rate:
            lo = mid
        else:
            hi = mid
    r = _rate(mid, alpha, u, which)
    if abs(r - target_rate) > tol:
        raise RuntimeError("bisection failed to reach the target rate")
    return mid


def sample_shape_params(spec: TeamSpec, n_features: int, protected_column: int):
    """Draw the per-expert behavioral shape (w, w_model, alpha).

    Depends only on the team seed, feature count and protected position, so
    the same experts keep their feature weights across cost scenarios.
    """
    rng = np.random.default_rng(spec.seed)
    shapes = []
    for _ in range(spec.n_experts):
        keep = rng.random(n_features) < spec.spike_prob
        slab = rng.normal(0.0, spec.slab_std, n_features)
        w = np.where(keep, slab, 0.0)
        w[protected_column] = rng.normal(spec.w_protected_mean, spec.w_protected_std)
        w_model = rng.normal(spec.w_model_mean, spec.w_model_std)
        alpha = max(rng.normal(spec.alpha_mean, spec.alpha_std), 0.0)
        shapes.append((w, float(w_model), float(alpha)))
    return shapes


def generate_team(
    spec: TeamSpec,
    xbar_cal,
    labels_cal,
    scores_cal,
    lam: float,
    classifier_cost: float,
    protected_column: int,
) -> list[ExpertParams]:
    """Sample a team of experts calibrated on the given split.

    Every expert gets a cost target near the classifier's cost, capped at
    ``cost_cap`` times the reject-all cost, then an (FPR, FNR) pair on the
    iso-cost line, and finally intercepts solved by bisection so the realized
    rates match the targets on the calibration split.
    """
    xbar_cal = np.asarray(xbar_cal, dtype=np.float64)
    labels_cal = np.asarray(labels_cal)
    scores_cal = np.asarray(scores_cal, dtype=np.float64)
    shapes = sample_shape_params(spec, xbar_cal.shape[1], protected_column)
    rng = np.random.default_rng(_derived_seed(spec.seed, lam))
    prevalence = float(labels_cal.mean())
    if not 0.0 < prevalence < 1.0:
        raise ValueError("calibration split must contain both classes")
    reject_all = lam * (1.0 - prevalence)
    cap = spec.cost_cap * reject_all
    team = []
    for j, (w, w_model, alpha) in enumerate(shapes, start=1):
        u = normalized_response(w, w_model, xbar_cal, scores_cal)
        target_cost = min(
            rng.normal(classifier_cost, spec.cost_spread * classifier_cost), cap
        )
        t_fnr = _sample_feasible_fnr(rng, spec, target_cost, lam, prevalence, j)
        t_fpr = target_fpr_from_cost(target_cost, t_fnr, lam, prevalence)
        # tighter-than-default tolerance: at cap-clamped targets the rate
        # error maps almost 1:1 onto the cost cap's 1e-9 headroom
        beta0 = solve_beta(t_fpr, alpha, u[labels_cal == 0], "fp", tol=1e-12)
        beta1 = solve_beta(t_fnr, alpha, u[labels_cal == 1], "fn", tol=1e-12)
        team.append(
            ExpertParams(j, w, w_model, alpha, beta0, beta1, target_cost, t_fpr, t_fnr)
        )
    return team


def _sample_feasible_fnr(rng, spec: TeamSpec, target_cost, lam, prevalence, expert_id):
    """Uniform FNR target conditioned on the induced FPR staying inside the
    configured bounds. The iso-cost map FNR -> FPR is linear and decreasing,
    so the feasible set is an interval and can be sampled directly (rejection
    sampling over the full range can exhaust any budget when the feasible
    sliver is narrow, e.g. at very small lambda)."""
    scale = lam * (1.0 - prevalence)
    a = target_cost / scale
    b = prevalence / scale
    lo = max(spec.fnr_range[0], (a - spec.fpr_bounds[1]) / b)
    hi = min(spec.fnr_range[1], (a - spec.fpr_bounds[0]) / b)
    if not lo < hi:
        raise RuntimeError(
            f"expert {expert_id}: no feasible (FPR, FNR) pair for cost target "
            f"{target_cost:.4g}"
        )
    return rng.uniform(lo, hi)


def _derived_seed(seed: int, lam: float) -> int:
    h = _mix64(np.uint64(seed) ^ np.frombuffer(np.float64(lam).tobytes(), dtype=np.uint64)[0])
    return int(h)


def sample_decisions(
    params: ExpertParams, xbar, labels, ids, model_scores, seed: int
) -> np.ndarray:
    """Stochastic decisions: flip each label with the expert's instance
    error probability. Uniforms are keyed by (seed, expert id, instance id)."""
    p_fp, p_fn = error_probabilities(params, xbar, model_scores)
    u = keyed_uniforms(seed, params.expert_id, ids)
    labels = np.asarray(labels)
    flip = np.where(labels == 0, u < p_fp, u < p_fn)
    return np.where(flip, 1 - labels, labels).astype(np.int64)


def complementarity_counts(pred_a, pred_b, labels) -> float:
    """Fraction of instances where predictor a is correct and b is not."""
    pred_a = np.asarray(pred_a)
    pred_b = np.asarray(pred_b)
    labels = np.asarray(labels)
    if not (len(pred_a) == len(pred_b) == len(labels)):
        raise ValueError("length mismatch")
    return float(np.mean((pred_a == labels) & (pred_b != labels)))


# ---------------------------------------------------------------------------
# team persistence


def team_to_json(team: list[ExpertParams], seed: int, lam: float, protected_column: int) -> dict:
    return {
        "format": "deccaf-team-v1",
        "seed": seed,
        "lambda": lam,
        "protected_column": protected_column,
        "experts": [
            {
                "expert_id": p.expert_id,
                "w": p.w.tolist(),
                "w_model": p.w_model,
                "alpha": p.alpha,
                "beta0": p.beta0,
                "beta1": p.beta1,
                "target_cost": p.target_cost,
                "target_fpr": p.target_fpr,
                "target_fnr": p.target_fnr,
            }
            for p in team
        ],
    }


def team_from_json(blob: dict) -> tuple[list[ExpertParams], int, float, int]:
    if blob.get("format") != "deccaf-team-v1":
        raise ValueError("not a team file")
    team = [
        ExpertParams(
            e["expert_id"], np.asarray(e["w"]), e["w_model"], e["alpha"],
            e["beta0"], e["beta1"], e["target_cost"], e["target_fpr"], e["target_fnr"],
        )
        for e in blob["experts"]
    ]
    return team, blob["seed"], blob["lambda"], blob["protected_column"]


def save_team(path, team, seed, lam, protected_column) -> None:
    with open(path, "w") as fh:
        json.dump(team_to_json(team, seed, lam, protected_column), fh, sort_keys=True, indent=1)


def load_team(path):
    with open(path) as fh:
        return team_from_json(json.load(fh))

