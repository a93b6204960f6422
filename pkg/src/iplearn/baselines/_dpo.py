"""Contextual-bandit reduction: DPO, and IPL with a policy-parameterized Q.

In a bandit every segment is one ``(context, action)`` step with no future,
so with ``Q(c, a) = alpha * (log pi(a|c) - log mu(a|c))`` the preference
loss over implicit rewards is the DPO loss over policy logits.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import log_softmax, softmax
from typing_extensions import override

from .._errors import ConfigurationError, EvaluationError
from ..approx import FunctionApprox, ParamBlock, make_optimizer
from ..data import LabelMode, PreferenceDataset, PreferencePair, Segment, label_pair
from ..ipl import IplConfig, PairBatch, ValueTarget, ipl_loss, preference_bce, preference_bce_grad
from ..mdp import Policy, TabularMdp, soft_policy

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class BanditProblem:
    """Contexts, actions, a reference policy and same-context preference pairs.

    Each pair compares two length-1 segments ``((c, c), (a,))`` that share
    the context ``c``.
    """

    n_contexts: int
    n_actions: int
    mu: Policy
    pairs: tuple[PreferencePair, ...]
    reward: FloatArray | None = None

    def __post_init__(self) -> None:
        pairs = tuple(self.pairs)
        self.mu.check_shape(self.n_contexts, self.n_actions)
        for pair in pairs:
            if pair.k != 1:
                raise ConfigurationError(f"bandit pairs compare single steps, got k={pair.k}")
            if pair.first.states[0] != pair.second.states[0]:
                raise ConfigurationError(
                    f"bandit pair compares contexts {pair.first.states[0]} and "
                    f"{pair.second.states[0]}; both segments must share the context"
                )
            pair.first.check_range(self.n_contexts, self.n_actions)
            pair.second.check_range(self.n_contexts, self.n_actions)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_reward(
        cls,
        reward: npt.ArrayLike,
        mu: Policy | None = None,
        mode: LabelMode = "argmax",
        seed: int | np.random.Generator = 0,
    ) -> BanditProblem:
        """Every unordered pair of distinct actions in every context, labelled from *reward*."""
        reward = np.asarray(reward, dtype=np.float64)
        n_contexts, n_actions = reward.shape
        mu = Policy.uniform(n_contexts, n_actions) if mu is None else mu
        rng = np.random.default_rng(seed)
        pairs = [
            label_pair(bandit_segment(c, a1), bandit_segment(c, a2), reward, mode, seed=rng)
            for c in range(n_contexts)
            for a1, a2 in itertools.combinations(range(n_actions), 2)
        ]
        return cls(n_contexts, n_actions, mu, tuple(pairs), reward)

    def to_dataset(self) -> PreferenceDataset:
        return PreferenceDataset(self.pairs)

    def as_mdp(self) -> TabularMdp:
        """One-step MDP view: every context loops to itself with zero discount."""
        transition = np.zeros((self.n_contexts, self.n_actions, self.n_contexts))
        transition[np.arange(self.n_contexts), :, np.arange(self.n_contexts)] = 1.0
        reward = np.zeros((self.n_contexts, self.n_actions)) if self.reward is None else self.reward
        return TabularMdp(
            transition,
            reward,
            0.0,
            np.full(self.n_contexts, 1.0 / self.n_contexts),
            {"generator": "bandit"},
        )


def bandit_segment(context: int, action: int) -> Segment:
    return Segment((context, context), (action,))


def make_random_bandit(
    n_contexts: int,
    n_actions: int,
    seed: int = 0,
    *,
    mode: LabelMode = "bernoulli",
    mu_floor: float = 0.05,
) -> BanditProblem:
    """Random rewards in ``[-1, 1]``, a random full-support ``mu`` and exhaustive pairs."""
    if n_contexts < 1 or n_actions < 2:
        raise ConfigurationError(
            f"a bandit needs >= 1 context and >= 2 actions, got {n_contexts} and {n_actions}"
        )
    rng = np.random.default_rng(seed)
    reward = rng.uniform(-1.0, 1.0, size=(n_contexts, n_actions))
    weights = rng.dirichlet(np.ones(n_actions), size=n_contexts) + mu_floor
    return BanditProblem.from_reward(reward, Policy.from_weights(weights), mode, rng)


class PolicyParameterizedQ(FunctionApprox):
    """``Q(c, a) = alpha * (log_softmax(theta)[c, a] - log mu(a|c))``.

    The parameters are the policy logits ``theta``; the implied soft-optimal
    policy ``mu * exp(Q / alpha) / Z`` is ``softmax(theta)`` exactly.

    Raises
    ------
    EvaluationError
        On evaluation at an action with ``mu(a|c) == 0``.
    """

    def __init__(self, mu: Policy, alpha: float, logits: npt.ArrayLike | None = None) -> None:
        if alpha <= 0:
            raise ConfigurationError(f"alpha must be > 0, got {alpha!r}")
        self.mu = mu
        self.alpha = float(alpha)
        self.n_states, self.n_actions = mu.probs.shape
        shape = (self.n_states, self.n_actions)
        values = np.zeros(shape) if logits is None else np.asarray(logits, dtype=np.float64)
        if values.shape != shape:
            raise ConfigurationError(f"logits must have shape {shape}, got {values.shape}")
        self.params = ParamBlock(values.ravel(), (shape,), "policy")

    @property
    def logits(self) -> FloatArray:
        return self.params.views()[0]

    def policy(self) -> Policy:
        return Policy.from_logits(self.logits)

    def _log_ratio(self, states: np.ndarray, actions: np.ndarray | None) -> FloatArray:
        log_pi = log_softmax(self.logits[states], axis=1)
        log_mu = self.mu.log_probs()[states]
        if actions is not None:
            rows = np.arange(states.shape[0])
            log_pi, log_mu = log_pi[rows, actions], log_mu[rows, actions]
        if not np.all(np.isfinite(log_mu)):
            raise EvaluationError("reference policy gives probability 0 to an evaluated action")
        if not np.all(np.isfinite(log_pi)):
            raise EvaluationError("policy gives probability 0 to an evaluated action")
        return log_pi - log_mu

    @override
    def forward(self, states: npt.ArrayLike, actions: npt.ArrayLike | None = None) -> FloatArray:
        states = np.asarray(states, dtype=np.int64)
        actions = None if actions is None else np.asarray(actions, dtype=np.int64)
        self._check_ids(states, actions)
        return self.alpha * self._log_ratio(states, actions)

    @override
    def backward(
        self,
        states: npt.ArrayLike,
        actions: npt.ArrayLike | None,
        upstream: npt.ArrayLike,
    ) -> FloatArray:
        states = np.asarray(states, dtype=np.int64)
        actions = None if actions is None else np.asarray(actions, dtype=np.int64)
        self._check_ids(states, actions)
        upstream = np.asarray(upstream, dtype=np.float64)
        probs = softmax(self.logits[states], axis=1)
        if actions is None:
            local = upstream - probs * upstream.sum(axis=1, keepdims=True)
        else:
            local = -probs * upstream[:, None]
            local[np.arange(states.shape[0]), actions] += upstream
        grad = np.zeros((self.n_states, self.n_actions))
        np.add.at(grad, states, self.alpha * local)
        return grad.ravel()

    @override
    def clone(self) -> PolicyParameterizedQ:
        return PolicyParameterizedQ(self.mu, self.alpha, self.logits)


def dpo_loss(
    policy: PolicyParameterizedQ | npt.ArrayLike,
    mu: Policy,
    bandit_pairs: PairBatch | Sequence[PreferencePair],
    alpha: float,
) -> tuple[float, FloatArray]:
    """Mean DPO loss over same-context pairs and its gradient w.r.t. the logits.

    ``h = alpha * (log pi(a1|c) - log mu(a1|c)) - alpha * (log pi(a2|c) - log mu(a2|c))``
    and the loss is ``BCE(h, y)``, so ``y = 1`` gives ``-log sigmoid(h)``.

    Parameters
    ----------
    policy : PolicyParameterizedQ | array_like
        Policy logits ``[context][action]``, bare or wrapped.
    mu : Policy
        Reference policy.
    bandit_pairs : PairBatch | Sequence[PreferencePair]
        Pairs of single-step segments.
    alpha : float
        Temperature.

    Returns
    -------
    tuple[float, np.ndarray]
        Loss and the flat gradient over the logits.
    """
    logits = policy.logits if isinstance(policy, PolicyParameterizedQ) else policy
    q = PolicyParameterizedQ(mu, alpha, logits)
    batch = bandit_pairs if isinstance(bandit_pairs, PairBatch) else PairBatch.from_pairs(bandit_pairs)
    if batch.k != 1:
        raise ConfigurationError(f"bandit pairs compare single steps, got k={batch.k}")
    contexts = batch.states1[:, 0]
    if not np.array_equal(contexts, batch.states2[:, 0]):
        raise ConfigurationError("both segments of every bandit pair must share the context")
    a1, a2 = batch.actions1[:, 0], batch.actions2[:, 0]
    h = q.forward(contexts, a1) - q.forward(contexts, a2)
    n = len(batch)
    loss = float(np.mean(preference_bce(h, batch.labels)))
    dh = q.alpha * preference_bce_grad(h, batch.labels) / n
    grad = np.zeros((q.n_states, q.n_actions))
    np.add.at(grad, (contexts, a1), dh)
    np.add.at(grad, (contexts, a2), -dh)
    return loss, grad.ravel()


def _batches(bandit: BanditProblem, config: IplConfig) -> Iterator[PairBatch]:
    if not bandit.pairs:
        raise ConfigurationError("bandit training needs at least one preference pair")
    pairs = PairBatch.from_pairs(bandit.pairs)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.total_steps):
        if config.pref_batch_size is None:
            yield pairs
        else:
            yield pairs.take(rng.integers(0, len(pairs), config.pref_batch_size))


def _initial_logits(bandit: BanditProblem) -> FloatArray:
    # start from pi = mu
    return bandit.mu.log_probs()


def train_dpo(bandit: BanditProblem, config: IplConfig) -> Policy:
    """Optimize the policy logits on :func:`dpo_loss` from ``pi = mu``.

    Uses ``config.optimizer`` at ``config.policy_lr`` for
    ``config.total_steps`` steps with temperature ``config.alpha``.
    """
    q = PolicyParameterizedQ(bandit.mu, config.alpha, _initial_logits(bandit))
    optimizer = make_optimizer(config.optimizer, q.param_count(), config.policy_lr)
    for step, batch in enumerate(_batches(bandit, config), start=1):
        loss, grad = dpo_loss(q, bandit.mu, batch, config.alpha)
        optimizer.apply(q.params.values, grad)
        if step % config.eval_interval == 0:
            logger.info("dpo step %d: loss=%.6g", step, loss)
    return q.policy()


def train_ipl_bandit(bandit: BanditProblem, config: IplConfig) -> Policy:
    """IPL-XQL on a bandit with ``Q`` parameterized through policy logits.

    There is no next state, so the value target is zero and the implicit
    reward is ``Q`` itself; the policy is the XQL extraction
    ``mu * exp(Q / alpha)``.  With ``config.lam == 0`` this follows the
    same trajectory as :func:`train_dpo`.
    """
    q = PolicyParameterizedQ(bandit.mu, config.alpha, _initial_logits(bandit))
    target = ValueTarget.zero(bandit.n_contexts, bandit.n_actions)
    optimizer = make_optimizer(config.optimizer, q.param_count(), config.policy_lr)
    for step, batch in enumerate(_batches(bandit, config), start=1):
        result = ipl_loss(q, target, config, batch)
        optimizer.apply(q.params.values, result.grad)
        if step % config.eval_interval == 0:
            logger.info("ipl bandit step %d: loss=%.6g", step, result.loss)
    return soft_policy(q.forward(np.arange(bandit.n_contexts)), config.alpha, bandit.mu)
