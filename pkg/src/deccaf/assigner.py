"""Correctness-probability matrices and exact capacity-constrained
assignment, solved per batch by successive shortest paths."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _flow_kernels
from .data_model import (
    MODE_EQUALITY,
    MODE_UPPER,
    CapacitySpec,
    Dataset,
    require_feasible,
)
from .errors import InfeasibleCapacityError
from .hem import HemModel
from .scorer import Scorer


@dataclass
class AssignmentProblem:
    """One batch: probability each decision-maker decides each instance
    correctly (column 0 = classifier), plus that batch's capacity row."""

    prob: np.ndarray
    capacities: np.ndarray
    mode: str = MODE_EQUALITY

    def __post_init__(self):
        self.prob = np.ascontiguousarray(self.prob, dtype=np.float64)
        self.capacities = np.asarray(self.capacities, dtype=np.int64)
        if self.prob.ndim != 2:
            raise ValueError("prob must be (instances x decision-makers)")
        if self.capacities.shape != (self.prob.shape[1],):
            raise ValueError("one capacity per decision-maker required")
        if (self.capacities < 0).any():
            raise ValueError("capacities must be non-negative")
        if self.mode not in (MODE_EQUALITY, MODE_UPPER):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not np.isfinite(self.prob).all():
            raise ValueError("probabilities must be finite")


@dataclass
class AssignmentSolution:
    assignment: np.ndarray
    objective: float
    optimal: bool


def objective_value(prob, assignment) -> float:
    """Sum of the chosen probabilities, in instance order."""
    assignment = np.asarray(assignment)
    return float(np.sum(prob[np.arange(len(assignment)), assignment]))


def _check_feasible(problem: AssignmentProblem) -> None:
    n = problem.prob.shape[0]
    total = int(problem.capacities.sum())
    if problem.mode == MODE_EQUALITY and total != n:
        raise InfeasibleCapacityError(
            f"equality mode needs capacities summing to {n}, got {total}"
        )
    if problem.mode == MODE_UPPER and total < n:
        raise InfeasibleCapacityError(
            f"upper-bound mode needs capacity for {n} instances, got {total}"
        )


def check_solution(problem: AssignmentProblem, solution: AssignmentSolution) -> None:
    """Post-hoc audit: row exclusivity and per-column capacity counts."""
    n, K = problem.prob.shape
    a = solution.assignment
    if a.shape != (n,) or (a < 0).any() or (a >= K).any():
        raise AssertionError("assignment vector malformed")
    counts = np.bincount(a, minlength=K)
    if problem.mode == MODE_EQUALITY:
        if not (counts == problem.capacities).all():
            raise AssertionError(f"equality capacities violated: {counts}")
    elif (counts > problem.capacities).any():
        raise AssertionError(f"capacity bounds violated: {counts}")


def solve(problem: AssignmentProblem) -> AssignmentSolution:
    """Provably optimal assignment maximizing the summed correctness
    probability under the capacity constraints.

    Ties break deterministically: lowest decision-maker index, then lowest
    instance id (instances augment in ascending order).
    """
    _check_feasible(problem)
    n = problem.prob.shape[0]
    if n == 0:
        return AssignmentSolution(np.empty(0, dtype=np.int64), 0.0, True)
    status, assign = _flow_kernels.solve_assignment(-problem.prob, problem.capacities)
    if status == 1:
        raise InfeasibleCapacityError("no decision-maker with remaining capacity")
    if status != 0:
        raise RuntimeError("assignment solver detected an inconsistent residual graph")
    solution = AssignmentSolution(assign, objective_value(problem.prob, assign), True)
    check_solution(problem, solution)
    return solution


_ENUM_CACHE: dict = {}


def _all_assignments(n: int, K: int) -> np.ndarray:
    key = (n, K)
    if key not in _ENUM_CACHE:
        _ENUM_CACHE[key] = np.array(
            list(itertools.product(range(K), repeat=n)), dtype=np.int64
        )
    return _ENUM_CACHE[key]


def brute_force_solve(problem: AssignmentProblem, max_candidates: int = 2_000_000) -> AssignmentSolution:
    """Exhaustive enumeration over all feasible assignments (small batches
    only). Ties resolve to the lexicographically smallest assignment."""
    _check_feasible(problem)
    n, K = problem.prob.shape
    if n == 0:
        return AssignmentSolution(np.empty(0, dtype=np.int64), 0.0, True)
    if K**n > max_candidates:
        raise ValueError(f"enumeration too large: {K}^{n}")
    A = _all_assignments(n, K)
    counts = np.stack([(A == j).sum(axis=1) for j in range(K)], axis=1)
    if problem.mode == MODE_EQUALITY:
        feasible = (counts == problem.capacities).all(axis=1)
    else:
        feasible = (counts <= problem.capacities).all(axis=1)
    if not feasible.any():
        raise InfeasibleCapacityError("no feasible assignment exists")
    F = A[feasible]
    objectives = problem.prob[np.arange(n)[None, :], F].sum(axis=1)
    best = int(np.argmax(objectives))
    assignment = F[best].copy()
    return AssignmentSolution(assignment, objective_value(problem.prob, assignment), True)


def correctness_matrix(
    classifier: Scorer,
    hem: HemModel,
    batch: Dataset,
    model_scores,
    hem_features=None,
) -> np.ndarray:
    """Estimated probability of a correct decision for every decision-maker.

    Column 0 is the classifier: it predicts its argmax class, so its
    correctness probability is max(p, 1 - p). Columns 1..J are the HEM's
    per-expert estimates. ``hem_features`` defaults to the raw batch features
    but is normally their preprocessed version.
    """
    p = classifier.predict_proba(batch.features)
    col0 = np.maximum(p, 1.0 - p)
    feats = batch.features if hem_features is None else hem_features
    cols = hem.correctness_columns(feats, model_scores)
    return np.column_stack([col0, cols])


@dataclass
class DeferralResult:
    solutions: dict
    assignment: np.ndarray
    predictions: np.ndarray


def collate_predictions(assignment, classifier_classes, expert_decisions) -> np.ndarray:
    """Final decision per instance: the classifier's class when assigned to
    column 0, otherwise the assigned expert's decision."""
    assignment = np.asarray(assignment)
    out = np.where(
        assignment == 0,
        classifier_classes,
        expert_decisions[np.arange(len(assignment)), np.maximum(assignment, 1) - 1],
    )
    return out.astype(np.int64)


def run_deferral(
    classifier: Scorer,
    hem: HemModel,
    dataset: Dataset,
    capacity_spec: CapacitySpec,
    model_scores,
    expert_decisions,
    hem_features=None,
) -> DeferralResult:
    """Solve every batch independently and collate final predictions aligned
    with the dataset's instance order."""
    require_feasible(capacity_spec, dataset)
    model_scores = np.asarray(model_scores, dtype=np.float64)
    expert_decisions = np.asarray(expert_decisions)
    batch_idx = capacity_spec.batch_index_for(dataset)
    assignment = np.full(len(dataset), -1, dtype=np.int64)
    classifier_classes = classifier.predict_class(dataset.features)
    solutions = {}
    for b in np.unique(batch_idx):
        rows = np.flatnonzero(batch_idx == b)
        sub = dataset.subset(rows)
        feats = None if hem_features is None else np.asarray(hem_features)[rows]
        prob = correctness_matrix(classifier, hem, sub, model_scores[rows], feats)
        problem = AssignmentProblem(prob, capacity_spec.capacities[b], capacity_spec.mode)
        sol = solve(problem)
        solutions[int(b)] = sol
        assignment[rows] = sol.assignment
    predictions = collate_predictions(assignment, classifier_classes, expert_decisions)
    return DeferralResult(solutions, assignment, predictions)


def sample_capacity_settings(n_instances, n_columns, n_settings, seed) -> list:
    """Capacity rows for the test variations: one uniform split plus sampled
    ones (normal around the even share, re-totaled on the largest column)."""
    K = n_columns
    base = n_instances // K
    rem = n_instances - base * K
    uniform = np.full(K, base, dtype=np.int64)
    uniform[:rem] += 1
    settings = [uniform]
    rng = np.random.default_rng(seed)
    for _ in range(n_settings - 1):
        caps = rng.normal(n_instances / K, n_instances / (5 * K), K)
        caps = np.maximum(np.rint(caps), 0).astype(np.int64)
        # largest column absorbs the rounding residual, spilling onto the
        # next-largest ones when absorption would go negative
        residual = n_instances - int(caps.sum())
        while residual != 0:
            j = int(np.argmax(caps))
            new = max(caps[j] + residual, 0)
            residual -= new - caps[j]
            caps[j] = new
        settings.append(caps)
    return settings
