"""Cost- and capacity-constrained deferral toolkit.

Trains a cost-weighted classifier and a joint human-expertise model from
one-expert-per-instance histories, then routes alert batches to the
decision-maker team by solving an exact capacity-constrained assignment.
Ships a synthetic alert-review benchmark with feature-dependent expert
simulation plus the standard comparison strategies.
"""

from ._engine import engine
from .alert_model import AlertModel, filter_alerts, lambda_from_threshold, pick_threshold
from .assigner import (
    AssignmentProblem,
    AssignmentSolution,
    brute_force_solve,
    correctness_matrix,
    run_deferral,
    solve,
)
from .baselines import (
    OvaModel,
    full_rejection,
    only_classifier,
    ova_assign,
    ova_surrogate,
    random_assign,
)
from .data_model import (
    CapacitySpec,
    CostStructure,
    Dataset,
    ExpertRecords,
    validate_capacity,
    weight_for,
)
from .errors import ConfigError, DegenerateTrainingError, InfeasibleCapacityError
from .expert_sim import (
    ExpertParams,
    PreprocessSpec,
    TeamSpec,
    complementarity_counts,
    error_probabilities,
    expected_cost,
    generate_team,
    sample_decisions,
    solve_beta,
    target_fpr_from_cost,
)
from .harness import (
    Pipeline,
    RunConfig,
    ScenarioConfig,
    SyntheticDataSpec,
    generate_synthetic,
    run_all,
)
from .hem import HemEncoder, HemModel, build_hem_rows, train_hem
from .metrics import (
    EvaluationReport,
    cost_per_100,
    summarize,
    weighted_auc,
    weighted_ece,
)
from .scorer import (
    Scorer,
    TrainConfig,
    fit,
    inverse_link,
    predict_class,
    select_scorer,
    weighted_log_loss,
)

__version__ = "0.1.0"
