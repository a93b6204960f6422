"""Comparators for IPL: the two-phase reward-model baseline and bandit DPO."""

from ._dpo import (
    BanditProblem,
    PolicyParameterizedQ,
    bandit_segment,
    dpo_loss,
    make_random_bandit,
    train_dpo,
    train_ipl_bandit,
)
from ._reward import RewardIqlTrainer, RewardModel, train_iql_with_reward, train_reward_mr

__all__ = [
    # Two-phase baseline
    "RewardModel",
    "RewardIqlTrainer",
    "train_reward_mr",
    "train_iql_with_reward",
    # Bandit reduction
    "BanditProblem",
    "PolicyParameterizedQ",
    "bandit_segment",
    "make_random_bandit",
    "dpo_loss",
    "train_dpo",
    "train_ipl_bandit",
]
