"""Two-phase baseline: fit an explicit Markovian reward, then run offline RL on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .._errors import ConfigurationError
from ..approx import FunctionApprox, MlpFn, TabularFn, make_optimizer
from ..data import PreferenceDataset, TransitionDataset, state_action_counts
from ..ipl import (
    EvalCallback,
    IplConfig,
    OfflineTrainer,
    PairBatch,
    QStepStats,
    TrainArtifacts,
    ValueTarget,
    ipl_loss,
)
from ..mdp import TabularMdp

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass
class RewardModel:
    """A learned reward ``r_theta(s, a)`` and its training log.

    Attributes
    ----------
    fn : FunctionApprox
        Function with role ``reward``.
    losses : list[tuple[int, float]]
        ``(step, preference BCE)`` at each evaluation interval.
    """

    fn: FunctionApprox
    losses: list[tuple[int, float]] = field(default_factory=list)

    @classmethod
    def from_table(cls, table: npt.ArrayLike) -> RewardModel:
        """Wrap a fixed ``[state][action]`` reward, e.g. the ground truth."""
        table = np.asarray(table, dtype=np.float64)
        return cls(TabularFn(table.shape[0], table.shape[1], "reward", table))

    def __call__(self, states: npt.ArrayLike, actions: npt.ArrayLike) -> FloatArray:
        return self.fn.forward(states, actions)

    def table(self) -> FloatArray:
        return self.fn.forward(np.arange(self.fn.n_states))

    def param_count(self) -> int:
        return self.fn.param_count()


def train_reward_mr(
    pref_dataset: PreferenceDataset,
    config: IplConfig,
    *,
    n_states: int | None = None,
    n_actions: int | None = None,
    offline_dataset: TransitionDataset | None = None,
) -> RewardModel:
    """Fit ``r_theta`` to the preferences by regularized binary cross-entropy.

    The objective is the IPL preference loss applied to ``r_theta`` directly
    (a zero value target makes the implicit reward the function itself):
    mean BCE plus ``lambda`` times the mean-square of the outputs on the data
    support, or on every cell with ``regularize_full_space``.  Batches are
    sampled and subsampled exactly as in IPL, for ``config.reward_steps``
    steps at ``config.reward_lr``.

    Raises
    ------
    ConfigurationError
        If there are no pairs.
    TrainingDivergenceError
        If the loss becomes non-finite.
    """
    if not pref_dataset.pairs:
        raise ConfigurationError("the reward model needs at least one preference pair")
    if n_states is None or n_actions is None:
        segments = pref_dataset.segments()
        n_states = max(max(seg.states) for seg in segments) + 1
        n_actions = max(max(seg.actions) for seg in segments) + 1
    pref_dataset.check_range(n_states, n_actions)
    if offline_dataset is None:
        offline_dataset = (
            pref_dataset.transitions if len(pref_dataset.transitions) else pref_dataset.segment_transitions()
        )
    if config.representation == "tabular":
        fn: FunctionApprox = TabularFn(n_states, n_actions, "reward")
    else:
        fn = MlpFn(n_states, n_actions, "reward", config.hidden_sizes, seed=config.seed * 10 + 4)
    optimizer = make_optimizer(config.optimizer, fn.param_count(), config.reward_lr)
    target = ValueTarget.zero(n_states, n_actions)
    rng = np.random.default_rng(config.seed)
    pairs = PairBatch.from_pairs(pref_dataset.pairs)
    model = RewardModel(fn)
    s_len = config.subsample_length
    for step in range(1, config.reward_steps + 1):
        index = np.arange(len(pairs)) if config.pref_batch_size is None else rng.integers(0, len(pairs), config.pref_batch_size)
        batch = pairs.take(index)
        if s_len is not None:
            batch = batch.subsample(s_len, rng)
        offline = np.empty((0, 3), dtype=np.int64)
        if len(offline_dataset):
            size = config.offline_batch_size
            rows = np.arange(len(offline_dataset)) if size is None else rng.integers(0, len(offline_dataset), size)
            offline = offline_dataset.transitions[rows]
        result = ipl_loss(fn, target, config, batch, offline)
        optimizer.apply(fn.params.values, result.grad)
        if step % config.eval_interval == 0 or step == config.reward_steps:
            model.losses.append((step, result.pref_loss))
            logger.info("reward model step %d: bce=%.6g reg=%.6g", step, result.pref_loss, result.reg_value)
    return model


class RewardIqlTrainer(OfflineTrainer):
    """Offline RL on labels from a fixed reward model.

    The Q-step regresses ``Q(s, a)`` onto ``r_theta(s, a) + gamma E[V^targ(s')]``
    by squared error; value and policy steps are shared with IPL.
    """

    def __init__(
        self,
        config: IplConfig,
        reward_model: RewardModel,
        transition_dataset: TransitionDataset,
        mdp: TabularMdp | None = None,
    ) -> None:
        if not len(transition_dataset):
            raise ConfigurationError("offline RL needs at least one transition")
        n_states, n_actions = reward_model.fn.n_states, reward_model.fn.n_actions
        assert n_actions is not None
        transition_dataset.check_range(n_states, n_actions)
        counts = state_action_counts(n_states, n_actions, transitions=transition_dataset)
        self.method = f"mr-{config.variant}"
        self.reward_model = reward_model
        super().__init__(config, transition_dataset, counts, mdp)

    def q_step(self) -> QStepStats:
        rows = self.offline_batch()
        s, a, sp = rows[:, 0], rows[:, 1], rows[:, 2]
        next_value = self.value_target().expected_next(s, a, sp)
        q_vals = self.q.forward(s, a)
        residual = q_vals - (self.reward_model(s, a) + self.config.gamma * next_value)
        n = max(rows.shape[0], 1)
        self.q_opt.apply(self.q.params.values, self.q.backward(s, a, 2.0 * residual / n))
        return QStepStats(
            implicit_rewards=q_vals - self.config.gamma * next_value,
            states=s,
            actions=a,
        )

    def learnables(self) -> list[FunctionApprox]:
        return [*super().learnables(), self.reward_model.fn]

    def artifacts(self, wall_clock: float = 0.0) -> TrainArtifacts:
        out = super().artifacts(wall_clock)
        out.reward_model = self.reward_model.fn
        return out


def train_iql_with_reward(
    reward_model: RewardModel,
    transition_dataset: TransitionDataset,
    config: IplConfig,
    mdp_for_eval: TabularMdp | None = None,
    *,
    on_eval: EvalCallback | None = None,
) -> TrainArtifacts:
    """Second phase of the two-phase baseline (IQL with ``config.variant="iql"``)."""
    return RewardIqlTrainer(config, reward_model, transition_dataset, mdp_for_eval).run(on_eval)
