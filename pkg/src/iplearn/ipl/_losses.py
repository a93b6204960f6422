"""Inverse soft-Bellman operator and the regularized preference losses.

A Q-function induces the implicit reward ``r_Q(s, a) = Q(s, a) - gamma *
E[V^targ(s')]``.  The preference model compares segment sums of ``r_Q``;
``ipl_loss`` is the mean binary cross-entropy of those comparisons plus
``lambda`` times the mean-square of ``r_Q`` over the regularized support.
``V^targ`` is held fixed: gradients flow into ``Q`` only.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import expit, logsumexp, softmax

from .._errors import ConfigurationError, TrainingDivergenceError
from ..approx import FunctionApprox, TabularFn
from ..data import PreferencePair, RankingQuery, segment_weights
from ._config import IplConfig

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


@dataclass(frozen=True)
class ValueTarget:
    """``V^targ`` evaluated at next states, held constant during a Q-step.

    Attributes
    ----------
    values : np.ndarray | FunctionApprox | Callable
        Table over states, a state-value function, or any callable mapping
        a state array to values.
    transition : np.ndarray | None
        When given, ``E_{s'}[V^targ(s')]`` uses the full transition row
        instead of the observed next state.
    """

    values: FloatArray | FunctionApprox | Callable[[IntArray], FloatArray]
    transition: FloatArray | None = None

    @classmethod
    def zero(cls, n_states: int, n_actions: int) -> ValueTarget:
        """Exact all-zero target; the implicit reward of any Q is then Q itself."""
        return cls(np.zeros(n_states), np.zeros((n_states, n_actions, n_states)))

    def at(self, states: npt.ArrayLike) -> FloatArray:
        states = np.asarray(states, dtype=np.int64)
        if isinstance(self.values, FunctionApprox):
            return self.values.forward(states)
        if callable(self.values):
            return np.asarray(self.values(states), dtype=np.float64)
        return np.asarray(self.values, dtype=np.float64)[states]

    def table(self, n_states: int) -> FloatArray:
        return self.at(np.arange(n_states))

    def expected_next(
        self, states: npt.ArrayLike, actions: npt.ArrayLike, next_states: npt.ArrayLike | None
    ) -> FloatArray:
        """``E[V^targ(s')]`` per row: exact with a transition tensor, sampled otherwise."""
        if self.transition is not None:
            v_all = self.table(self.transition.shape[0])
            return self.transition[np.asarray(states), np.asarray(actions)] @ v_all
        if next_states is None:
            raise ConfigurationError("sampled expectations need observed next states")
        return self.at(next_states)


def _as_target(value_target: ValueTarget | FloatArray | FunctionApprox, transition: FloatArray | None) -> ValueTarget:
    if isinstance(value_target, ValueTarget):
        return value_target
    return ValueTarget(value_target, transition)


def _q_values(q: FunctionApprox | FloatArray, states: IntArray, actions: IntArray) -> FloatArray:
    if isinstance(q, FunctionApprox):
        return q.forward(states, actions)
    return np.asarray(q, dtype=np.float64)[states, actions]


def implicit_reward(
    q: FunctionApprox | FloatArray,
    value_target: ValueTarget | FloatArray | FunctionApprox,
    gamma: float,
    transitions: npt.ArrayLike,
    *,
    transition: FloatArray | None = None,
) -> FloatArray:
    """Apply the inverse soft-Bellman operator to a batch of ``(s, a, s')`` rows.

    Parameters
    ----------
    q : FunctionApprox | np.ndarray
        Q-function or ``[state][action]`` table.
    value_target : ValueTarget | np.ndarray | FunctionApprox
        ``V^targ``; a bare table or function is wrapped in :class:`ValueTarget`.
    gamma : float
        Discount.
    transitions : array_like
        ``(N, 3)`` integer rows.
    transition : np.ndarray | None
        Transition tensor for exact expectations.

    Returns
    -------
    np.ndarray
        ``r_Q`` for every row.
    """
    rows = np.asarray(transitions, dtype=np.int64).reshape(-1, 3)
    target = _as_target(value_target, transition)
    s, a, sp = rows[:, 0], rows[:, 1], rows[:, 2]
    return _q_values(q, s, a) - gamma * target.expected_next(s, a, sp)


def implicit_reward_table(
    q_table: FloatArray, v_table: FloatArray, gamma: float, transition: FloatArray
) -> FloatArray:
    """``r_Q`` over every ``(s, a)`` with exact expectations."""
    return np.asarray(q_table) - gamma * (transition @ np.asarray(v_table))


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairBatch:
    """Preference pairs as aligned ``(B, k)`` arrays."""

    states1: IntArray  # (B, k + 1)
    actions1: IntArray  # (B, k)
    states2: IntArray
    actions2: IntArray
    labels: FloatArray  # (B,)

    @classmethod
    def from_pairs(cls, pairs: Sequence[PreferencePair]) -> PairBatch:
        if not pairs:
            raise ConfigurationError("a preference batch needs at least one pair")
        ks = {pair.k for pair in pairs}
        if len(ks) != 1:
            raise ConfigurationError(f"all pairs in a batch must share k, got {sorted(ks)}")
        return cls(
            np.array([p.first.states for p in pairs], dtype=np.int64),
            np.array([p.first.actions for p in pairs], dtype=np.int64),
            np.array([p.second.states for p in pairs], dtype=np.int64),
            np.array([p.second.actions for p in pairs], dtype=np.int64),
            np.array([p.label for p in pairs], dtype=np.float64),
        )

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def k(self) -> int:
        return self.actions1.shape[1]

    def take(self, index: IntArray) -> PairBatch:
        return PairBatch(
            self.states1[index], self.actions1[index], self.states2[index], self.actions2[index], self.labels[index]
        )

    def window(self, start: int, length: int) -> PairBatch:
        """Cut both segments of every pair to ``length`` steps at ``start``."""
        if start < 0 or length < 1 or start + length > self.k:
            raise ConfigurationError(f"window [{start}, {start + length}) outside k={self.k}")
        return PairBatch(
            self.states1[:, start : start + length + 1],
            self.actions1[:, start : start + length],
            self.states2[:, start : start + length + 1],
            self.actions2[:, start : start + length],
            self.labels,
        )

    def subsample(self, s: int, rng: np.random.Generator) -> PairBatch:
        """One uniform start in ``{0, ..., k - s}`` shared by the whole batch."""
        if not 1 <= s <= self.k:
            raise ConfigurationError(f"subsample length s={s} must lie in [1, k={self.k}]")
        if s == self.k:
            return self
        return self.window(int(rng.integers(0, self.k - s + 1)), s)

    def rows(self) -> tuple[IntArray, IntArray, IntArray]:
        """Flattened ``(s, a, s')`` of first segments, then second segments."""
        s = np.concatenate([self.states1[:, :-1].ravel(), self.states2[:, :-1].ravel()])
        a = np.concatenate([self.actions1.ravel(), self.actions2.ravel()])
        sp = np.concatenate([self.states1[:, 1:].ravel(), self.states2[:, 1:].ravel()])
        return s, a, sp


@dataclass(frozen=True)
class RankingBatch:
    """Rankings as ``(R, K, k)`` arrays with segments in preference order."""

    states: IntArray  # (R, K, k + 1)
    actions: IntArray  # (R, K, k)

    @classmethod
    def from_rankings(cls, rankings: Sequence[RankingQuery]) -> RankingBatch:
        if not rankings:
            raise ConfigurationError("a ranking batch needs at least one ranking")
        shapes = {(len(r.segments), r.k) for r in rankings}
        if len(shapes) != 1:
            raise ConfigurationError(f"all rankings in a batch must share (K, k), got {sorted(shapes)}")
        return cls(
            np.array([[seg.states for seg in r.ordered()] for r in rankings], dtype=np.int64),
            np.array([[seg.actions for seg in r.ordered()] for r in rankings], dtype=np.int64),
        )

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def k(self) -> int:
        return self.actions.shape[2]

    def take(self, index: IntArray) -> RankingBatch:
        return RankingBatch(self.states[index], self.actions[index])

    def subsample(self, s: int, rng: np.random.Generator) -> RankingBatch:
        if not 1 <= s <= self.k:
            raise ConfigurationError(f"subsample length s={s} must lie in [1, k={self.k}]")
        if s == self.k:
            return self
        start = int(rng.integers(0, self.k - s + 1))
        return RankingBatch(
            self.states[:, :, start : start + s + 1], self.actions[:, :, start : start + s]
        )

    def rows(self) -> tuple[IntArray, IntArray, IntArray]:
        return (
            self.states[:, :, :-1].ravel(),
            self.actions.ravel(),
            self.states[:, :, 1:].ravel(),
        )


# ---------------------------------------------------------------------------
# Scalar pieces
# ---------------------------------------------------------------------------


def preference_logit(
    pair: PreferencePair,
    implicit_rewards: FloatArray,
    *,
    gamma: float = 1.0,
    discount_in_segment: bool = False,
) -> float:
    """``sum_t w_t r_Q(first) - sum_t w_t r_Q(second)`` from a ``[state][action]`` table."""
    table = np.asarray(implicit_rewards, dtype=np.float64)
    w = segment_weights(pair.k, gamma, discount_in_segment)
    r1 = table[pair.first.visited_states(), pair.first.action_array()]
    r2 = table[pair.second.visited_states(), pair.second.action_array()]
    return float((r1 - r2) @ w)


def preference_bce(logit: npt.ArrayLike, y: npt.ArrayLike) -> FloatArray | float:
    """Binary cross-entropy on logits, ``max(z, 0) - z y + log(1 + exp(-|z|))``."""
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    out = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(out) if out.ndim == 0 else out


def preference_bce_grad(logit: npt.ArrayLike, y: npt.ArrayLike) -> FloatArray:
    """``d BCE / d logit = sigmoid(z) - y``."""
    return expit(np.asarray(logit, dtype=np.float64)) - np.asarray(y, dtype=np.float64)


def l2_regularizer(*supports: npt.ArrayLike) -> float:
    """Mean-square of implicit rewards, weighting each nonempty support equally.

    ``l2_regularizer(r_p, r_o)`` is ``0.5 * mean(r_p**2) + 0.5 * mean(r_o**2)``;
    an empty support drops out of the average.

    Raises
    ------
    ConfigurationError
        If every support is empty.
    """
    value, _ = _l2_with_grad(*supports)
    return value


def _l2_with_grad(*supports: npt.ArrayLike) -> tuple[float, list[FloatArray]]:
    arrays = [np.asarray(r, dtype=np.float64).ravel() for r in supports]
    live = [r for r in arrays if r.size]
    if not live:
        raise ConfigurationError("regularizer support is empty")
    share = 1.0 / len(live)
    value = sum(share * float(np.mean(r**2)) for r in live)
    grads = [share * 2.0 * r / r.size if r.size else r for r in arrays]
    return value, grads


def ranking_nll(scores: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Plackett-Luce negative log-likelihood of rankings in preference order.

    Parameters
    ----------
    scores : array_like
        ``(R, K)`` segment scores; column 0 is the most preferred segment.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        Per-ranking NLL ``(R,)`` and its gradient w.r.t. the scores ``(R, K)``.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n_rank, n_items = scores.shape
    nll = np.zeros(n_rank)
    grad = np.zeros_like(scores)
    for stage in range(n_items - 1):
        tail = scores[:, stage:]
        nll += logsumexp(tail, axis=1) - scores[:, stage]
        grad[:, stage:] += softmax(tail, axis=1)
        grad[:, stage] -= 1.0
    return nll, grad


# ---------------------------------------------------------------------------
# Regularized Q-step losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IplLossResult:
    """Loss value, its gradient w.r.t. the Q parameters and diagnostics."""

    loss: float
    grad: FloatArray
    pref_loss: float
    reg_value: float
    implicit_rewards: FloatArray
    logits: FloatArray


def _regularized_loss(
    q: FunctionApprox,
    target: ValueTarget,
    config: IplConfig,
    pref_rows: tuple[IntArray, IntArray, IntArray],
    pref_term: Callable[[FloatArray], tuple[FloatArray, FloatArray, FloatArray]],
    offline_batch: npt.ArrayLike | None,
) -> IplLossResult:
    s_p, a_p, sp_p = pref_rows
    offline = (
        np.empty((0, 3), dtype=np.int64)
        if offline_batch is None
        else np.asarray(offline_batch, dtype=np.int64).reshape(-1, 3)
    )
    s_o, a_o, sp_o = offline[:, 0], offline[:, 1], offline[:, 2]
    gamma = config.gamma

    r_p = q.forward(s_p, a_p) - gamma * target.expected_next(s_p, a_p, sp_p)
    losses, logits, d_rp = pref_term(r_p)
    pref_loss = float(np.mean(losses))

    states = [s_p]
    actions = [a_p]
    upstream = [d_rp]
    if config.regularize_full_space:
        if not isinstance(q, TabularFn) or target.transition is None:
            raise ConfigurationError("full-space regularization needs a tabular Q and exact expectations")
        r_table = implicit_reward_table(q.table, target.table(q.n_states), gamma, target.transition)
        reg_value, (d_table,) = _l2_with_grad(r_table)
        grid_s, grid_a = np.indices(r_table.shape)
        states.append(grid_s.ravel())
        actions.append(grid_a.ravel())
        upstream.append(config.lam * d_table)
        r_o = np.empty(0)
        reported = np.concatenate([r_p, r_table.ravel()])
    else:
        r_o = q.forward(s_o, a_o) - gamma * target.expected_next(s_o, a_o, sp_o) if len(offline) else np.empty(0)
        reg_value, (d_rp_reg, d_ro) = _l2_with_grad(r_p, r_o)
        upstream[0] = upstream[0] + config.lam * d_rp_reg
        if len(offline):
            states.append(s_o)
            actions.append(a_o)
            upstream.append(config.lam * d_ro)
        reported = np.concatenate([r_p, r_o])

    loss = pref_loss + config.lam * reg_value
    if not np.isfinite(loss):
        raise TrainingDivergenceError(
            f"non-finite IPL loss (pref_loss={pref_loss!r}, reg={reg_value!r}, "
            f"max |logit|={float(np.max(np.abs(logits))) if logits.size else 0.0:.3e}, "
            f"batch rows={s_p.shape[0]}, lambda={config.lam})"
        )
    grad = q.backward(np.concatenate(states), np.concatenate(actions), np.concatenate(upstream))
    return IplLossResult(loss, grad, pref_loss, reg_value, reported, logits)


def ipl_loss(
    q: FunctionApprox,
    value_target: ValueTarget | FloatArray | FunctionApprox,
    config: IplConfig,
    pref_batch: PairBatch | Sequence[PreferencePair],
    offline_batch: npt.ArrayLike | None = None,
    *,
    transition: FloatArray | None = None,
) -> IplLossResult:
    """Regularized preference loss over implicit rewards and its Q-gradient.

    ``loss = mean_i BCE(z_i, y_i) + lambda * psi(r_Q)`` with
    ``z_i = sum_t w_t (r_Q(first_t) - r_Q(second_t))``.  ``psi`` averages
    ``r_Q**2`` over the preference batch and the offline batch with equal
    weight, or over the whole table when ``config.regularize_full_space``.

    Raises
    ------
    TrainingDivergenceError
        If the loss is not finite.
    """
    batch = pref_batch if isinstance(pref_batch, PairBatch) else PairBatch.from_pairs(pref_batch)
    target = _as_target(value_target, transition)
    n, k = len(batch), batch.k
    w = segment_weights(k, config.gamma, config.discount_in_segment)

    def pairwise(r_p: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        r1 = r_p[: n * k].reshape(n, k)
        r2 = r_p[n * k :].reshape(n, k)
        z = (r1 - r2) @ w
        dz = preference_bce_grad(z, batch.labels) / n
        d_r1 = np.outer(dz, w)
        return np.asarray(preference_bce(z, batch.labels)), z, np.concatenate([d_r1.ravel(), -d_r1.ravel()])

    return _regularized_loss(q, target, config, batch.rows(), pairwise, offline_batch)


def ipl_ranking_loss(
    q: FunctionApprox,
    value_target: ValueTarget | FloatArray | FunctionApprox,
    config: IplConfig,
    ranking_batch: RankingBatch | Sequence[RankingQuery],
    offline_batch: npt.ArrayLike | None = None,
    *,
    transition: FloatArray | None = None,
) -> IplLossResult:
    """Plackett-Luce negative log-likelihood over implicit rewards plus ``lambda * psi``.

    The returned ``logits`` are the ``(R, K)`` segment scores.
    """
    batch = ranking_batch if isinstance(ranking_batch, RankingBatch) else RankingBatch.from_rankings(ranking_batch)
    target = _as_target(value_target, transition)
    n_rank, n_items, k = batch.actions.shape
    w = segment_weights(k, config.gamma, config.discount_in_segment)

    def plackett_luce(r_p: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        scores = r_p.reshape(n_rank, n_items, k) @ w
        nll, d_scores = ranking_nll(scores)
        d_r = (d_scores / n_rank)[:, :, None] * w[None, None, :]
        return nll, scores, d_r.ravel()

    return _regularized_loss(q, target, config, batch.rows(), plackett_luce, offline_batch)
