"""Finite MDPs, exact policy evaluation and KL-regularized optimal control.

Everything here is exact (direct linear solves, fixed points to 1e-10) and is
the ground truth the learners in :mod:`iplearn.ipl` and
:mod:`iplearn.baselines` are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy.linalg as spl
from scipy.special import logsumexp, rel_entr, softmax

from ._errors import ConfigurationError, ConvergenceError, NumericalSolveError
from ._registry import resolve_codec

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

#: Dense ``[state][action]`` table.
QTable = FloatArray
#: Dense ``[state]`` table.
VTable = FloatArray

STOCHASTIC_ATOL = 1e-12
GRID_ACTIONS = ("up", "down", "left", "right")
_GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _frozen(values: Any, dtype: type = np.float64) -> np.ndarray:
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_stochastic(values: np.ndarray, name: str) -> None:
    if np.any(values < 0):
        raise ConfigurationError(f"{name} has negative entries")
    sums = values.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > STOCHASTIC_ATOL:
        raise ConfigurationError(
            f"{name} rows must sum to 1 within {STOCHASTIC_ATOL:g} (worst deviation {worst:.3e})"
        )


def log_probs(probs: np.ndarray) -> FloatArray:
    """Elementwise log with ``-inf`` for zero entries and no warnings."""
    out = np.full(probs.shape, -np.inf)
    np.log(probs, out=out, where=probs > 0)
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with a hidden expert reward.

    Attributes
    ----------
    transition : np.ndarray
        Probability tensor ``[state][action][next_state]``.
    expert_reward : np.ndarray
        Reward ``r_E`` indexed ``[state][action]``; never shown to learners.
    discount : float
        Discount ``gamma`` in ``[0, 1)``.
    initial_dist : np.ndarray
        Start-state distribution.
    metadata : dict
        Provenance, e.g. ``{"generator": "random", "seed": 7}``.
    """

    transition: FloatArray
    expert_reward: FloatArray
    discount: float
    initial_dist: FloatArray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        transition = _frozen(self.transition)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ConfigurationError(
                f"transition must have shape (S, A, S), got {transition.shape}"
            )
        n_states, n_actions, _ = transition.shape
        if n_states < 1 or n_actions < 1:
            raise ConfigurationError("an MDP needs at least one state and one action")
        reward = _frozen(self.expert_reward)
        if reward.shape != (n_states, n_actions):
            raise ConfigurationError(
                f"expert_reward must have shape {(n_states, n_actions)}, got {reward.shape}"
            )
        if not np.all(np.isfinite(reward)):
            raise ConfigurationError("expert_reward must be finite")
        initial = _frozen(self.initial_dist)
        if initial.shape != (n_states,):
            raise ConfigurationError(
                f"initial_dist must have shape {(n_states,)}, got {initial.shape}"
            )
        discount = float(self.discount)
        if not 0.0 <= discount < 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1), got {discount!r}")
        _check_stochastic(transition, "transition")
        _check_stochastic(initial, "initial_dist")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "expert_reward", reward)
        object.__setattr__(self, "initial_dist", initial)
        object.__setattr__(self, "discount", discount)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_state_actions(self) -> int:
        return self.n_states * self.n_actions

    def with_reward(self, reward: np.ndarray) -> TabularMdp:
        """Return a copy with a different expert reward table."""
        return replace(self, expert_reward=reward)

    def expected_next(self, values: np.ndarray) -> FloatArray:
        """Return ``E_{s'}[values(s')]`` for every ``(s, a)``."""
        return self.transition @ np.asarray(values, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic policy as a ``[state][action]`` probability table."""

    probs: FloatArray

    def __post_init__(self) -> None:
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ConfigurationError(f"policy table must be 2-D, got shape {probs.shape}")
        _check_stochastic(probs, "policy")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> Policy:
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> Policy:
        """Row-wise softmax of *logits*; ``-inf`` entries get probability 0."""
        return cls(softmax(np.asarray(logits, dtype=np.float64), axis=1))

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> Policy:
        """Normalize non-negative row weights; all-zero rows become uniform."""
        weights = np.asarray(weights, dtype=np.float64)
        totals = weights.sum(axis=1, keepdims=True)
        uniform = np.full_like(weights, 1.0 / weights.shape[1])
        probs = np.divide(weights, totals, out=uniform, where=totals > 0)
        return cls(probs)

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> Policy:
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.shape[0], n_actions))
        probs[np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs)

    def log_probs(self) -> FloatArray:
        return log_probs(self.probs)

    def check_shape(self, n_states: int, n_actions: int) -> None:
        if self.probs.shape != (n_states, n_actions):
            raise ConfigurationError(
                f"policy shape {self.probs.shape} does not match MDP shape "
                f"{(n_states, n_actions)}"
            )


def kl_divergence(p: np.ndarray, q: np.ndarray) -> FloatArray:
    """Row-wise ``KL(p || q)`` for probability tables (``0 log 0 = 0``)."""
    return rel_entr(np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)).sum(axis=1)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def make_random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    branching_factor: int,
    reward_scale: float = 1.0,
    seed: int = 0,
) -> TabularMdp:
    """Generate a Garnet-style random MDP.

    Each ``(s, a)`` moves to a random support of ``branching_factor`` states
    with Dirichlet(1) probabilities.  Rewards are uniform in
    ``[-reward_scale, reward_scale]`` and the start distribution is uniform.

    Raises
    ------
    ConfigurationError
        If ``n_states < 2``, ``n_actions < 2``, the branching factor is outside
        ``[1, n_states]`` or ``reward_scale`` is negative.
    """
    if n_states < 2 or n_actions < 2:
        raise ConfigurationError(
            f"need n_states >= 2 and n_actions >= 2, got ({n_states}, {n_actions})"
        )
    if not 1 <= branching_factor <= n_states:
        raise ConfigurationError(
            f"branching_factor must lie in [1, {n_states}], got {branching_factor}"
        )
    if reward_scale < 0:
        raise ConfigurationError(f"reward_scale must be >= 0, got {reward_scale!r}")
    rng = np.random.default_rng(seed)
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            support = rng.choice(n_states, size=branching_factor, replace=False)
            transition[s, a, support] = rng.dirichlet(np.ones(branching_factor))
    transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return TabularMdp(
        transition=transition,
        expert_reward=reward,
        discount=gamma,
        initial_dist=np.full(n_states, 1.0 / n_states),
        metadata={
            "generator": "random",
            "seed": seed,
            "branching_factor": branching_factor,
            "reward_scale": reward_scale,
        },
    )


def make_gridworld(
    width: int,
    height: int,
    goal_cell: tuple[int, int],
    step_penalty: float = 0.0,
    slip_prob: float = 0.0,
    gamma: float = 0.9,
    seed: int = 0,
) -> TabularMdp:
    """Build a four-action grid MDP with an absorbing goal.

    States are numbered row-major (``state = row * width + col``) and actions
    follow :data:`GRID_ACTIONS`.  Moves into a wall leave the agent in place.
    With probability ``slip_prob`` the chosen action is replaced by a uniformly
    random one.  The reward of ``(s, a)`` is the probability of entering the
    goal minus ``step_penalty``; the goal itself is absorbing with reward 0,
    so the first arrival is paid exactly once.  ``seed`` only enters the
    metadata: the construction is deterministic.

    Raises
    ------
    ConfigurationError
        If the grid has fewer than two cells, the goal lies outside it or
        ``slip_prob`` is outside ``[0, 1)``.
    """
    if width < 1 or height < 1 or width * height < 2:
        raise ConfigurationError(f"grid must have at least two cells, got {width}x{height}")
    row, col = goal_cell
    if not (0 <= row < height and 0 <= col < width):
        raise ConfigurationError(
            f"goal_cell {goal_cell!r} lies outside the {height}x{width} grid"
        )
    if not 0.0 <= slip_prob < 1.0:
        raise ConfigurationError(f"slip_prob must lie in [0, 1), got {slip_prob!r}")

    n_states = width * height
    n_actions = len(GRID_ACTIONS)
    goal = row * width + col

    moves = np.empty((n_states, n_actions), dtype=np.int64)
    for s in range(n_states):
        r, c = divmod(s, width)
        for a, (dr, dc) in enumerate(_GRID_MOVES):
            nr, nc = r + dr, c + dc
            moves[s, a] = nr * width + nc if (0 <= nr < height and 0 <= nc < width) else s

    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            if s == goal:
                transition[s, a, s] = 1.0
                continue
            transition[s, a, moves[s, a]] += 1.0 - slip_prob
            for b in range(n_actions):
                transition[s, a, moves[s, b]] += slip_prob / n_actions
    transition /= transition.sum(axis=2, keepdims=True)

    reward = transition[:, :, goal] - step_penalty
    reward[goal] = 0.0

    initial = np.ones(n_states)
    initial[goal] = 0.0
    initial /= initial.sum()
    return TabularMdp(
        transition=transition,
        expert_reward=reward,
        discount=gamma,
        initial_dist=initial,
        metadata={
            "generator": "gridworld",
            "seed": seed,
            "width": width,
            "height": height,
            "goal_cell": [row, col],
            "step_penalty": step_penalty,
            "slip_prob": slip_prob,
        },
    )


# ---------------------------------------------------------------------------
# Exact evaluation and control
# ---------------------------------------------------------------------------


def policy_transition_matrix(mdp: TabularMdp, policy: Policy) -> FloatArray:
    """State-action transition matrix ``P^pi``.

    ``P[(s, a), (s', a')] = transition[s, a, s'] * policy[s', a']``, flattened
    row-major to shape ``(S*A, S*A)``.
    """
    policy.check_shape(mdp.n_states, mdp.n_actions)
    n = mdp.n_state_actions
    return np.einsum("ijk,kl->ijkl", mdp.transition, policy.probs).reshape(n, n)


def exact_q_evaluation(
    mdp: TabularMdp, policy: Policy, reward: np.ndarray, *, tol: float = 1e-10
) -> QTable:
    """Solve ``Q = r + gamma P^pi Q`` with an LU factorization.

    Parameters
    ----------
    mdp : TabularMdp
        Dynamics and discount.
    policy : Policy
        Evaluated policy.
    reward : np.ndarray
        ``[state][action]`` reward table.
    tol : float
        Allowed sup-norm Bellman residual, scaled by ``max(1, |r|_inf)``.

    Returns
    -------
    np.ndarray
        ``[state][action]`` Q table.

    Raises
    ------
    NumericalSolveError
        If the residual of the solution exceeds the tolerance.
    """
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigurationError(
            f"reward must have shape {(mdp.n_states, mdp.n_actions)}, got {reward.shape}"
        )
    p_pi = policy_transition_matrix(mdp, policy)
    r = reward.ravel()
    system = np.eye(mdp.n_state_actions) - mdp.discount * p_pi
    q = spl.lu_solve(spl.lu_factor(system), r)
    residual = float(np.max(np.abs(q - r - mdp.discount * (p_pi @ q))))
    bound = tol * max(1.0, float(np.max(np.abs(r))) if r.size else 1.0)
    if residual > bound:
        raise NumericalSolveError(
            f"policy evaluation residual {residual:.3e} exceeds {bound:.3e}", residual
        )
    return q.reshape(mdp.n_states, mdp.n_actions)


def soft_value(q: np.ndarray, alpha: float, mu: Policy) -> VTable:
    """``V(s) = alpha * log E_{a~mu}[exp(Q(s, a) / alpha)]`` (stable log-sum-exp)."""
    return alpha * logsumexp(np.asarray(q) / alpha, axis=1, b=mu.probs)


def soft_policy(q: np.ndarray, alpha: float, mu: Policy) -> Policy:
    """``pi(a|s) ∝ mu(a|s) exp(Q(s, a) / alpha)``."""
    return Policy.from_logits(np.asarray(q) / alpha + mu.log_probs())


def soft_value_iteration(
    mdp: TabularMdp,
    reward: np.ndarray,
    alpha: float,
    mu: Policy,
    *,
    tol: float = 1e-10,
    max_iterations: int = 100_000,
) -> tuple[QTable, VTable, Policy]:
    """Iterate the optimal soft-Bellman operator to its fixed point.

    Returns
    -------
    tuple[np.ndarray, np.ndarray, Policy]
        ``(Q*, V*, pi*)`` with ``pi*(a|s) ∝ mu(a|s) exp(Q*(s, a) / alpha)``.

    Raises
    ------
    ConfigurationError
        If ``alpha <= 0`` or shapes disagree.
    ConvergenceError
        If the sup-norm residual is still ``>= tol`` after ``max_iterations``.
    """
    if alpha <= 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha!r}")
    mu.check_shape(mdp.n_states, mdp.n_actions)
    reward = np.asarray(reward, dtype=np.float64)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    residual = np.inf
    for _ in range(max_iterations):
        q_next = reward + mdp.discount * mdp.expected_next(soft_value(q, alpha, mu))
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual < tol:
            break
    else:
        raise ConvergenceError(
            f"soft value iteration did not converge in {max_iterations} iterations "
            f"(residual {residual:.3e})",
            residual,
        )
    return q, soft_value(q, alpha, mu), soft_policy(q, alpha, mu)


def evaluate_policy_return(
    mdp: TabularMdp, policy: Policy, reward: np.ndarray | None = None
) -> float:
    """Exact ``E_{s~initial_dist}[V^pi(s)]``; *reward* defaults to ``r_E``."""
    reward = mdp.expert_reward if reward is None else reward
    q = exact_q_evaluation(mdp, policy, reward)
    return float(mdp.initial_dist @ (policy.probs * q).sum(axis=1))


def soft_policy_value(
    mdp: TabularMdp,
    policy: Policy,
    reward: np.ndarray,
    alpha: float,
    mu: Policy,
) -> float:
    """KL-regularized return ``E[sum_t gamma^t (r - alpha log(pi / mu))]``."""
    penalty = np.where(policy.probs > 0, policy.log_probs() - mu.log_probs(), 0.0)
    return evaluate_policy_return(mdp, policy, np.asarray(reward) - alpha * penalty)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A reward-free rollout: ``states`` has one more entry than ``actions``."""

    states: IntArray
    actions: IntArray
    trajectory_id: int = 0

    def __post_init__(self) -> None:
        states = _frozen(self.states, np.int64)
        actions = _frozen(self.actions, np.int64)
        if states.shape[0] != actions.shape[0] + 1:
            raise ConfigurationError(
                f"trajectory needs len(states) == len(actions) + 1, got "
                f"{states.shape[0]} and {actions.shape[0]}"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return self.actions.shape[0]

    def transitions(self) -> IntArray:
        """``(T, 3)`` array of ``(state, action, next_state)`` rows."""
        return np.stack([self.states[:-1], self.actions, self.states[1:]], axis=1)


def _inverse_cdf(cdf: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= cdf.shape[0]:
        # u landed above a total that rounded below 1
        idx = int(np.flatnonzero(np.diff(np.concatenate(([0.0], cdf))) > 0)[-1])
    return idx


def rollout(
    mdp: TabularMdp,
    policy: Policy,
    horizon: int,
    seed: int | np.random.Generator,
    *,
    initial_state: int | None = None,
    trajectory_id: int = 0,
) -> Trajectory:
    """Sample a trajectory of ``horizon`` transitions (no reward recorded).

    Parameters
    ----------
    seed : int | np.random.Generator
        Seed or generator; the result is a pure function of it.
    initial_state : int | None
        Fixed start state; drawn from ``initial_dist`` when ``None``.
    """
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    policy.check_shape(mdp.n_states, mdp.n_actions)
    rng = np.random.default_rng(seed)
    policy_cdf = np.cumsum(policy.probs, axis=1)
    dynamics_cdf = np.cumsum(mdp.transition, axis=2)
    draws = rng.random(2 * horizon + 1)

    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    if initial_state is None:
        states[0] = _inverse_cdf(np.cumsum(mdp.initial_dist), draws[0])
    else:
        states[0] = initial_state
    for t in range(horizon):
        s = states[t]
        actions[t] = _inverse_cdf(policy_cdf[s], draws[2 * t + 1])
        states[t + 1] = _inverse_cdf(dynamics_cdf[s, actions[t]], draws[2 * t + 2])
    return Trajectory(states, actions, trajectory_id)


# ---------------------------------------------------------------------------
# Documents
# ---------------------------------------------------------------------------


def mdp_to_dict(mdp: TabularMdp) -> dict[str, Any]:
    """Logical document of an MDP (nested lists, plain scalars)."""
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.discount,
        "transition": mdp.transition.tolist(),
        "expert_reward": mdp.expert_reward.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
        "metadata": dict(mdp.metadata),
    }


def dict_to_mdp(doc: dict[str, Any]) -> TabularMdp:
    """Inverse of :func:`mdp_to_dict`.

    Raises
    ------
    ConfigurationError
        If a key is missing or the declared sizes disagree with the arrays.
    """
    missing = {"gamma", "transition", "expert_reward", "initial_dist"} - doc.keys()
    if missing:
        raise ConfigurationError(f"MDP document is missing {sorted(missing)}")
    mdp = TabularMdp(
        np.asarray(doc["transition"], dtype=np.float64),
        np.asarray(doc["expert_reward"], dtype=np.float64),
        float(doc["gamma"]),
        np.asarray(doc["initial_dist"], dtype=np.float64),
        dict(doc.get("metadata") or {}),
    )
    declared = (doc.get("n_states", mdp.n_states), doc.get("n_actions", mdp.n_actions))
    if tuple(int(d) for d in declared) != (mdp.n_states, mdp.n_actions):
        raise ConfigurationError(
            f"declared sizes {declared} do not match the arrays {(mdp.n_states, mdp.n_actions)}"
        )
    return mdp


def save_mdp(path: str | Path, mdp: TabularMdp, **extra: Any) -> None:
    """Write *mdp* with the document codec registered for *path*.

    Extra keyword arguments (e.g. ``config_hash``) are stored alongside.
    """
    resolve_codec(path, kind="document").dump(path, {**mdp_to_dict(mdp), **extra})


def load_mdp(path: str | Path) -> TabularMdp:
    return dict_to_mdp(resolve_codec(path, kind="document").load(path))
