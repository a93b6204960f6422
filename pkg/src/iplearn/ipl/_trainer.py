"""Offline training loops.

:class:`OfflineTrainer` owns the Q, V and policy parameters and runs the
shared loop: a Q-step (supplied by the subclass), a Polyak target update for
network runs, a variant-specific value step and an advantage-weighted policy
step.  :class:`IplTrainer` supplies the regularized preference Q-step.
"""

from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
from scipy.special import softmax

from .._errors import ConfigurationError, TrainingDivergenceError
from ..approx import FunctionApprox, MlpFn, TabularFn, make_optimizer
from ..data import PreferenceDataset, TransitionDataset, state_action_counts
from ..mdp import Policy, TabularMdp, evaluate_policy_return
from ..metrics import MetricsLog, Row
from ._config import IplConfig
from ._losses import (
    PairBatch,
    RankingBatch,
    ValueTarget,
    implicit_reward_table,
    ipl_loss,
    ipl_ranking_loss,
)
from ._policy import awr_policy_step, behavior_distribution, extract_policy_awr
from ._value import value_estimate_awac, value_update_iql, value_update_xql

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
EvalCallback = Callable[[int, Row], None]


@dataclass
class TrainArtifacts:
    """Everything a finished run leaves behind.

    Attributes
    ----------
    q, v : FunctionApprox
        Final Q and V functions (``v`` is ``None`` for AWAC runs).
    policy : Policy
        Final extracted policy over all states.
    value_target : np.ndarray
        ``V^targ`` table the implicit reward was computed with.
    behavior_policy : Policy
        Empirical action distribution of the training data.
    implicit_reward : np.ndarray | None
        ``r_Q`` over every ``(s, a)`` with exact expectations; ``None``
        without an evaluation MDP.
    support_mask : np.ndarray
        Cells the regularizer acted on.
    metrics : MetricsLog
        Evaluation rows.
    config : IplConfig
        Configuration echo.
    steps, wall_clock : int, float
        Steps taken and elapsed seconds.
    method : str
        ``ipl-xql``, ``ipl-iql``, ``ipl-awac``, ``mr-iql`` and so on.
    """

    q: FunctionApprox
    v: FunctionApprox | None
    policy: Policy
    value_target: FloatArray
    behavior_policy: Policy
    implicit_reward: FloatArray | None
    support_mask: npt.NDArray[np.bool_]
    metrics: MetricsLog
    config: IplConfig
    steps: int
    wall_clock: float
    method: str
    policy_fn: FunctionApprox | None = None
    reward_model: FunctionApprox | None = None
    extras: dict[str, float] = field(default_factory=dict)

    def learnables(self) -> list[FunctionApprox]:
        return [f for f in (self.q, self.v, self.policy_fn, self.reward_model) if f is not None]

    def param_count(self) -> int:
        return sum(f.param_count() for f in self.learnables())


@dataclass(frozen=True)
class QStepStats:
    """Diagnostics of one Q-step plus the rows the value and policy steps reuse."""

    implicit_rewards: FloatArray
    states: IntArray
    actions: IntArray
    pref_loss: float | None = None
    reg_value: float | None = None


# ---------------------------------------------------------------------------
# Value-step strategies
# ---------------------------------------------------------------------------


class ValueStep(ABC):
    """Variant-specific value target, value update and AWR temperature."""

    has_v: bool = True

    def __init__(self, trainer: OfflineTrainer) -> None:
        self.trainer = trainer

    @property
    def beta(self) -> float:
        return self.trainer.config.beta

    @abstractmethod
    def value_at(self, states: IntArray) -> FloatArray:
        """``V^targ`` at *states*."""

    @abstractmethod
    def update(self, states: IntArray, actions: IntArray) -> float | None:
        """Fit the value to ``Q_target`` on the batch rows; return the loss."""


class XqlValueStep(ValueStep):
    """Linex regression: ``V`` tracks the soft value of ``Q`` under the data."""

    @property
    def beta(self) -> float:
        return 1.0 / self.trainer.config.alpha

    def value_at(self, states: IntArray) -> FloatArray:
        assert self.trainer.v is not None
        return self.trainer.v.forward(states)

    def update(self, states: IntArray, actions: IntArray) -> float | None:
        t = self.trainer
        assert t.v is not None
        return value_update_xql(
            t.v, t.q_target.forward(states, actions), t.config.alpha, states, t.v_opt, z_max=t.config.z_max
        )


class IqlValueStep(ValueStep):
    """Expectile regression of ``V`` on ``Q_target``."""

    def value_at(self, states: IntArray) -> FloatArray:
        assert self.trainer.v is not None
        return self.trainer.v.forward(states)

    def update(self, states: IntArray, actions: IntArray) -> float | None:
        t = self.trainer
        assert t.v is not None
        return value_update_iql(t.v, t.q_target.forward(states, actions), t.config.tau, states, t.v_opt)


class AwacValueStep(ValueStep):
    """No value parameters: ``V(s)`` is read off ``Q`` under the current policy."""

    has_v = False

    def value_at(self, states: IntArray) -> FloatArray:
        t = self.trainer
        mode = "expectation" if t.tabular else "greedy"
        return value_estimate_awac(t.q_target.forward(states), t.policy_rows(states), mode=mode)

    def update(self, states: IntArray, actions: IntArray) -> float | None:
        return None


_VALUE_STEPS: dict[str, type[ValueStep]] = {
    "xql": XqlValueStep,
    "iql": IqlValueStep,
    "awac": AwacValueStep,
}


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------


def _infer_sizes(
    mdp: TabularMdp | None, transitions: TransitionDataset, segments_states: list[int], segments_actions: list[int]
) -> tuple[int, int]:
    if mdp is not None:
        return mdp.n_states, mdp.n_actions
    states = list(segments_states)
    actions = list(segments_actions)
    if len(transitions):
        states += [int(transitions.states.max()), int(transitions.next_states.max())]
        actions.append(int(transitions.actions.max()))
    if not states or not actions:
        raise ConfigurationError("cannot infer MDP sizes from an empty dataset")
    return max(states) + 1, max(actions) + 1


class OfflineTrainer(ABC):
    """Shared Q / V / policy loop; subclasses provide :meth:`q_step`.

    Parameters
    ----------
    config : IplConfig
        Hyperparameters.
    offline : TransitionDataset
        Reward-free transitions ``D_o``.
    counts : np.ndarray
        ``[state][action]`` visit counts over all training data; they define
        the behavior distribution and the regularized support.
    mdp : TabularMdp | None
        Evaluation MDP (ground-truth returns, exact expectations).
    oracle_rstar : np.ndarray | None
        Oracle reward table; enables the ``oracle_reward_gap`` metric.
    """

    method: str = "offline"

    def __init__(
        self,
        config: IplConfig,
        offline: TransitionDataset,
        counts: FloatArray,
        mdp: TabularMdp | None = None,
        *,
        oracle_rstar: FloatArray | None = None,
    ) -> None:
        self.config = config
        self.mdp = mdp
        self.offline = offline
        self.counts = np.asarray(counts, dtype=np.float64)
        self.n_states, self.n_actions = self.counts.shape
        if mdp is not None and config.gamma != mdp.discount:
            raise ConfigurationError(
                f"config gamma {config.gamma!r} differs from the MDP discount {mdp.discount!r}"
            )
        exact = config.expectation == "exact" or (
            config.expectation == "auto" and config.representation == "tabular" and mdp is not None
        )
        if exact and mdp is None:
            raise ConfigurationError("exact expectations need the evaluation MDP")
        if config.regularize_full_space and not exact:
            raise ConfigurationError("full-space regularization needs exact expectations")
        self.transition = mdp.transition if exact and mdp is not None else None
        self.oracle_rstar = None if oracle_rstar is None else np.asarray(oracle_rstar, dtype=np.float64)
        self.rng = np.random.default_rng(config.seed)
        self.behavior = behavior_distribution(self.counts)

        self.q = self._make_fn("q", seed_offset=1)
        self.q_target = self.q if self.tabular else self.q.clone()
        self.q_opt = make_optimizer(config.optimizer, self.q.param_count(), config.q_lr)
        self.value_step = _VALUE_STEPS[config.variant](self)
        self.v: FunctionApprox | None = None
        if self.value_step.has_v:
            self.v = self._make_fn("v", seed_offset=2)
            self.v_opt = make_optimizer(config.optimizer, self.v.param_count(), config.v_lr)
        self.policy_fn: FunctionApprox | None = None
        self.pi_table = self.behavior.probs.copy()
        if not self.tabular:
            self.policy_fn = self._make_fn("policy", seed_offset=3)
            self.policy_opt = make_optimizer(config.optimizer, self.policy_fn.param_count(), config.policy_lr)

        self.metrics = MetricsLog()
        self.step_count = 0
        self._last_value_loss: float | None = None

    # -- construction helpers -------------------------------------------------

    @property
    def tabular(self) -> bool:
        return self.config.representation == "tabular"

    def _make_fn(self, role: str, seed_offset: int) -> FunctionApprox:
        n_actions = None if role == "v" else self.n_actions
        if self.tabular:
            return TabularFn(self.n_states, n_actions, role)  # type: ignore[arg-type]
        return MlpFn(
            self.n_states,
            self.n_actions,
            role,  # type: ignore[arg-type]
            self.config.hidden_sizes,
            seed=self.config.seed * 10 + seed_offset,
        )

    def learnables(self) -> list[FunctionApprox]:
        return [f for f in (self.q, self.v, self.policy_fn) if f is not None]

    def param_count(self) -> int:
        return sum(f.param_count() for f in self.learnables())

    def _sample(self, n: int, size: int | None) -> IntArray:
        if size is None:
            return np.arange(n)
        return self.rng.integers(0, n, size=size)

    def offline_batch(self) -> IntArray:
        if not len(self.offline):
            return np.empty((0, 3), dtype=np.int64)
        return self.offline.transitions[self._sample(len(self.offline), self.config.offline_batch_size)]

    # -- evaluation helpers ---------------------------------------------------

    def value_target(self) -> ValueTarget:
        return ValueTarget(self.value_step.value_at, self.transition)

    def policy_rows(self, states: IntArray) -> FloatArray:
        if self.policy_fn is None:
            return self.pi_table[states]
        return softmax(self.policy_fn.forward(states), axis=1)

    def current_policy(self) -> Policy:
        states = np.arange(self.n_states)
        if self.policy_fn is not None:
            return Policy.from_logits(self.policy_fn.forward(states))
        if self.config.variant == "awac":
            return Policy(self.pi_table)
        return extract_policy_awr(
            self.q.forward(states),
            self.value_step.value_at(states),
            self.value_step.beta,
            self.counts,
            self.config.weight_max,
        )

    def implicit_reward_table(self) -> FloatArray | None:
        if self.mdp is None:
            return None
        states = np.arange(self.n_states)
        return implicit_reward_table(
            self.q.forward(states), self.value_step.value_at(states), self.config.gamma, self.mdp.transition
        )

    def support_mask(self) -> npt.NDArray[np.bool_]:
        if self.config.regularize_full_space:
            return np.ones((self.n_states, self.n_actions), dtype=bool)
        return self.counts > 0

    # -- loop -----------------------------------------------------------------

    @abstractmethod
    def q_step(self) -> QStepStats:
        """Sample batches and apply one optimizer step to ``Q``."""

    def _update_target(self) -> None:
        if self.q_target is self.q:
            return
        rate = self.config.target_update_rate
        target = self.q_target.params.values
        target *= 1.0 - rate
        target += rate * self.q.params.values

    def _policy_step(self, states: IntArray, actions: IntArray) -> None:
        if self.policy_fn is not None:
            advantages = self.q_target.forward(states, actions) - self.value_step.value_at(states)
            awr_policy_step(
                self.policy_fn,
                states,
                actions,
                advantages,
                self.value_step.beta,
                self.config.weight_max,
                self.policy_opt,
            )
        elif self.config.variant == "awac":
            all_states = np.arange(self.n_states)
            q_rows = self.q.forward(all_states)
            v = value_estimate_awac(q_rows, self.pi_table)
            self.pi_table = extract_policy_awr(
                q_rows, v, self.value_step.beta, self.counts, self.config.weight_max
            ).probs.copy()

    def step(self) -> QStepStats:
        """One full iteration: Q-step, target update, V-step, policy step."""
        stats = self.q_step()
        self.step_count += 1
        magnitude = float(np.mean(np.abs(stats.implicit_rewards))) if stats.implicit_rewards.size else 0.0
        if not np.isfinite(magnitude) or magnitude > self.config.divergence_bound:
            raise TrainingDivergenceError(
                f"mean |r_Q| = {magnitude:.3e} exceeds the divergence bound "
                f"{self.config.divergence_bound:g} at step {self.step_count} "
                f"(lambda={self.config.lam}); a larger lambda keeps the implicit reward bounded"
            )
        self._update_target()
        self._last_value_loss = self.value_step.update(stats.states, stats.actions)
        self._policy_step(stats.states, stats.actions)
        return stats

    def evaluate(self, stats: QStepStats) -> Row:
        """Append one metrics row for the current step."""
        policy = self.current_policy()
        gt_return = evaluate_policy_return(self.mdp, policy) if self.mdp is not None else None
        gap = None
        if self.oracle_rstar is not None:
            table = self.implicit_reward_table()
            if table is not None:
                gap = float(np.max(np.abs(table - self.oracle_rstar)[self.support_mask()]))
        r = stats.implicit_rewards
        row = self.metrics.append(
            self.step_count,
            pref_loss=stats.pref_loss,
            reg_value=stats.reg_value,
            value_loss=self._last_value_loss,
            mean_abs_implicit_reward=float(np.mean(np.abs(r))) if r.size else None,
            max_abs_implicit_reward=float(np.max(np.abs(r))) if r.size else None,
            gt_return=gt_return,
            oracle_reward_gap=gap,
        )
        logger.info(
            "%s step %d: pref_loss=%s value_loss=%s gt_return=%s",
            self.method,
            self.step_count,
            row["pref_loss"],
            row["value_loss"],
            row["gt_return"],
        )
        return row

    def run(self, on_eval: EvalCallback | None = None) -> TrainArtifacts:
        """Train for ``config.total_steps`` steps and collect the artifacts."""
        start = time.perf_counter()
        total = self.config.total_steps
        for step in range(1, total + 1):
            stats = self.step()
            if step % self.config.eval_interval == 0 or step == total:
                row = self.evaluate(stats)
                if on_eval is not None:
                    on_eval(step, row)
        return self.artifacts(time.perf_counter() - start)

    def artifacts(self, wall_clock: float = 0.0) -> TrainArtifacts:
        states = np.arange(self.n_states)
        return TrainArtifacts(
            q=self.q,
            v=self.v,
            policy=self.current_policy(),
            value_target=self.value_step.value_at(states),
            behavior_policy=self.behavior,
            implicit_reward=self.implicit_reward_table(),
            support_mask=self.support_mask(),
            metrics=self.metrics,
            config=self.config,
            steps=self.step_count,
            wall_clock=wall_clock,
            method=self.method,
            policy_fn=self.policy_fn,
        )


class IplTrainer(OfflineTrainer):
    """Inverse preference learning: the Q-step minimizes the regularized preference loss.

    When no separate offline dataset is given, the transitions stored with
    the preference dataset are used, or else the transitions inside its
    segments.
    """

    def __init__(
        self,
        config: IplConfig,
        pref_dataset: PreferenceDataset,
        offline_dataset: TransitionDataset | None = None,
        mdp: TabularMdp | None = None,
        *,
        oracle_rstar: FloatArray | None = None,
    ) -> None:
        if config.loss == "pairwise" and not pref_dataset.pairs:
            raise ConfigurationError("pairwise IPL needs at least one preference pair")
        if config.loss == "ranking" and not pref_dataset.rankings:
            raise ConfigurationError("ranking IPL needs at least one ranking")
        if offline_dataset is None:
            offline_dataset = (
                pref_dataset.transitions if len(pref_dataset.transitions) else pref_dataset.segment_transitions()
            )
        segments = pref_dataset.segments()
        n_states, n_actions = _infer_sizes(
            mdp,
            offline_dataset,
            [max(seg.states) for seg in segments],
            [max(seg.actions) for seg in segments],
        )
        pref_dataset.check_range(n_states, n_actions)
        offline_dataset.check_range(n_states, n_actions)
        counts = state_action_counts(
            n_states, n_actions, pref_dataset.pairs, offline_dataset, pref_dataset.rankings
        )
        self.method = f"ipl-{config.variant}"
        super().__init__(config, offline_dataset, counts, mdp, oracle_rstar=oracle_rstar)
        self.pairs = PairBatch.from_pairs(pref_dataset.pairs) if config.loss == "pairwise" else None
        self.rankings = RankingBatch.from_rankings(pref_dataset.rankings) if config.loss == "ranking" else None

    def q_step(self) -> QStepStats:
        config = self.config
        offline = self.offline_batch()
        target = self.value_target()
        s_len = config.subsample_length
        if self.pairs is not None:
            batch = self.pairs.take(self._sample(len(self.pairs), config.pref_batch_size))
            if s_len is not None:
                batch = batch.subsample(s_len, self.rng)
            result = ipl_loss(self.q, target, config, batch, offline)
            s_p, a_p, _ = batch.rows()
        else:
            assert self.rankings is not None
            ranked = self.rankings.take(self._sample(len(self.rankings), config.pref_batch_size))
            if s_len is not None:
                ranked = ranked.subsample(s_len, self.rng)
            result = ipl_ranking_loss(self.q, target, config, ranked, offline)
            s_p, a_p, _ = ranked.rows()
        self.q_opt.apply(self.q.params.values, result.grad)
        return QStepStats(
            implicit_rewards=result.implicit_rewards,
            states=np.concatenate([s_p, offline[:, 0]]),
            actions=np.concatenate([a_p, offline[:, 1]]),
            pref_loss=result.pref_loss,
            reg_value=result.reg_value,
        )


def train_ipl(
    config: IplConfig,
    pref_dataset: PreferenceDataset,
    offline_dataset: TransitionDataset | None = None,
    mdp_for_eval: TabularMdp | None = None,
    *,
    oracle_rstar: FloatArray | None = None,
    on_eval: EvalCallback | None = None,
) -> TrainArtifacts:
    """Run inverse preference learning with ``config.variant`` (xql, iql or awac).

    Raises
    ------
    ConfigurationError
        For empty datasets or settings that contradict each other.
    TrainingDivergenceError
        If the loss becomes non-finite or the implicit reward exceeds
        ``config.divergence_bound``.
    """
    trainer = IplTrainer(config, pref_dataset, offline_dataset, mdp_for_eval, oracle_rstar=oracle_rstar)
    return trainer.run(on_eval)
