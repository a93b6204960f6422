import importlib.metadata

from ._errors import (
    ComparisonRefusedError,
    ConfigurationError,
    ConvergenceError,
    DatasetParseError,
    EvaluationError,
    ExperimentError,
    IplError,
    NumericalSolveError,
    OptimizerError,
    OracleError,
    TrainingDivergenceError,
)

# Environments and exact control
from .mdp import (
    Policy,
    TabularMdp,
    Trajectory,
    evaluate_policy_return,
    exact_q_evaluation,
    kl_divergence,
    load_mdp,
    make_gridworld,
    make_random_mdp,
    rollout,
    save_mdp,
    soft_policy,
    soft_policy_value,
    soft_value,
    soft_value_iteration,
)

# Data
from .data import (
    PreferenceDataset,
    PreferencePair,
    RankingQuery,
    Segment,
    TransitionDataset,
    build_preference_dataset,
    exhaustive_single_step_pairs,
    label_pair,
    label_ranking,
    load_dataset,
    make_offline_dataset,
    sample_segments,
    save_dataset,
    segment_return,
    subsample_batch,
)

# Learnable functions
from .approx import (
    AdamState,
    FunctionApprox,
    MlpFn,
    ParamBlock,
    SgdState,
    TabularFn,
    adam_step,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .metrics import METRIC_COLUMNS, MetricsLog

# Learners
from .ipl import (
    IplConfig,
    TrainArtifacts,
    implicit_reward,
    ipl_loss,
    ipl_ranking_loss,
    train_ipl,
)
from .baselines import (
    BanditProblem,
    RewardModel,
    dpo_loss,
    train_dpo,
    train_ipl_bandit,
    train_iql_with_reward,
    train_reward_mr,
)
from .oracle import (
    GapReport,
    OracleReport,
    compare_to_oracle,
    oracle_policy,
    solve_rstar,
    verify_bijection,
)

# Experiments
from .harness import ExperimentConfig, RunResult, run_experiment, sweep

__all__ = [
    # Errors
    "IplError",
    "ConfigurationError",
    "EvaluationError",
    "ConvergenceError",
    "NumericalSolveError",
    "OptimizerError",
    "TrainingDivergenceError",
    "OracleError",
    "ComparisonRefusedError",
    "DatasetParseError",
    "ExperimentError",
    # Environments
    "TabularMdp",
    "Policy",
    "Trajectory",
    "make_random_mdp",
    "make_gridworld",
    "exact_q_evaluation",
    "soft_value",
    "soft_policy",
    "soft_value_iteration",
    "soft_policy_value",
    "evaluate_policy_return",
    "kl_divergence",
    "rollout",
    "save_mdp",
    "load_mdp",
    # Data
    "Segment",
    "PreferencePair",
    "RankingQuery",
    "TransitionDataset",
    "PreferenceDataset",
    "segment_return",
    "label_pair",
    "label_ranking",
    "sample_segments",
    "subsample_batch",
    "make_offline_dataset",
    "build_preference_dataset",
    "exhaustive_single_step_pairs",
    "save_dataset",
    "load_dataset",
    # Learnable functions
    "ParamBlock",
    "FunctionApprox",
    "TabularFn",
    "MlpFn",
    "AdamState",
    "SgdState",
    "adam_step",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "MetricsLog",
    "METRIC_COLUMNS",
    # Learners
    "IplConfig",
    "TrainArtifacts",
    "implicit_reward",
    "ipl_loss",
    "ipl_ranking_loss",
    "train_ipl",
    "RewardModel",
    "train_reward_mr",
    "train_iql_with_reward",
    "BanditProblem",
    "dpo_loss",
    "train_dpo",
    "train_ipl_bandit",
    # Oracle
    "OracleReport",
    "GapReport",
    "solve_rstar",
    "verify_bijection",
    "oracle_policy",
    "compare_to_oracle",
    # Experiments
    "ExperimentConfig",
    "RunResult",
    "run_experiment",
    "sweep",
]

try:
    from .harness import compare_runs
except ImportError:
    pass
else:
    __all__ += ["compare_runs"]

_OPTIONAL_ATTRS: dict[str, str] = {
    "compare_runs": "analysis",
}


def __getattr__(name: str):
    if name in _OPTIONAL_ATTRS:
        extra = _OPTIONAL_ATTRS[name]
        raise ImportError(
            f"'{name}' requires additional dependencies. "
            f"Install them with: pip install iplearn[{extra}]"
        )
    raise AttributeError(f"module 'iplearn' has no attribute '{name}'")


__version__ = importlib.metadata.version("iplearn")
