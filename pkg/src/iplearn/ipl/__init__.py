"""Inverse preference learning: implicit rewards, losses and trainers."""

from ._config import VARIANTS, IplConfig
from ._losses import (
    IplLossResult,
    PairBatch,
    RankingBatch,
    ValueTarget,
    implicit_reward,
    implicit_reward_table,
    ipl_loss,
    ipl_ranking_loss,
    l2_regularizer,
    preference_bce,
    preference_bce_grad,
    preference_logit,
    ranking_nll,
)
from ._policy import awr_policy_step, awr_weights, behavior_distribution, extract_policy_awr
from ._trainer import (
    AwacValueStep,
    EvalCallback,
    IplTrainer,
    IqlValueStep,
    OfflineTrainer,
    QStepStats,
    TrainArtifacts,
    ValueStep,
    XqlValueStep,
    train_ipl,
)
from ._value import (
    expectile_loss,
    linex_loss,
    value_estimate_awac,
    value_update_iql,
    value_update_xql,
    weighted_expectile,
)

__all__ = [
    # Configuration
    "IplConfig",
    "VARIANTS",
    # Implicit reward and losses
    "ValueTarget",
    "PairBatch",
    "RankingBatch",
    "IplLossResult",
    "implicit_reward",
    "implicit_reward_table",
    "preference_logit",
    "preference_bce",
    "preference_bce_grad",
    "l2_regularizer",
    "ranking_nll",
    "ipl_loss",
    "ipl_ranking_loss",
    # Value updates
    "linex_loss",
    "expectile_loss",
    "weighted_expectile",
    "value_update_xql",
    "value_update_iql",
    "value_estimate_awac",
    # Policy extraction
    "awr_weights",
    "behavior_distribution",
    "extract_policy_awr",
    "awr_policy_step",
    # Training
    "ValueStep",
    "XqlValueStep",
    "IqlValueStep",
    "AwacValueStep",
    "OfflineTrainer",
    "IplTrainer",
    "QStepStats",
    "TrainArtifacts",
    "EvalCallback",
    "train_ipl",
]
