"""Tests for MDP generators, exact evaluation and soft value iteration."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from iplearn import (
    ConfigurationError,
    Policy,
    TabularMdp,
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
from iplearn.mdp import dict_to_mdp, mdp_to_dict

# =============================================================================
# Construction
# =============================================================================


def test_random_mdp_is_stochastic(small_mdp):
    """Transition rows and the start distribution sum to one."""
    assert small_mdp.transition.shape == (5, 3, 5)
    np.testing.assert_allclose(small_mdp.transition.sum(axis=2), 1.0, atol=1e-12)
    assert math.isclose(small_mdp.initial_dist.sum(), 1.0)


def test_random_mdp_branching_factor(small_mdp):
    """Each (s, a) reaches exactly ``branching_factor`` next states."""
    support = np.count_nonzero(small_mdp.transition, axis=2)
    assert np.all(support == 2)


def test_random_mdp_reward_range():
    """Rewards lie in [-scale, scale]."""
    mdp = make_random_mdp(6, 4, 0.5, 3, reward_scale=2.0, seed=1)
    assert np.all(np.abs(mdp.expert_reward) <= 2.0)


def test_random_mdp_is_reproducible():
    """Same seed, same MDP; different seed, different MDP."""
    a = make_random_mdp(5, 3, 0.9, 2, seed=11)
    b = make_random_mdp(5, 3, 0.9, 2, seed=11)
    c = make_random_mdp(5, 3, 0.9, 2, seed=12)
    np.testing.assert_array_equal(a.transition, b.transition)
    np.testing.assert_array_equal(a.expert_reward, b.expert_reward)
    assert not np.array_equal(a.expert_reward, c.expert_reward)


@pytest.mark.parametrize(
    ("n_states", "n_actions", "branching"),
    [(1, 3, 1), (5, 1, 1), (5, 3, 0), (5, 3, 6)],
)
def test_random_mdp_rejects_bad_sizes(n_states, n_actions, branching):
    """Degenerate sizes are configuration errors."""
    with pytest.raises(ConfigurationError):
        make_random_mdp(n_states, n_actions, 0.9, branching)


def test_mdp_is_immutable(small_mdp):
    """Arrays of a constructed MDP cannot be written."""
    with pytest.raises(ValueError):
        small_mdp.transition[0, 0, 0] = 1.0


@pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5])
def test_mdp_rejects_bad_discount(small_mdp, gamma):
    """The discount must lie in [0, 1)."""
    with pytest.raises(ConfigurationError, match="discount"):
        dataclasses.replace(small_mdp, discount=gamma)


def test_mdp_rejects_non_stochastic_rows():
    """Transition rows summing to anything but one are refused."""
    transition = np.full((2, 2, 2), 0.6)
    with pytest.raises(ConfigurationError, match="sum to 1"):
        TabularMdp(transition, np.zeros((2, 2)), 0.9, np.array([0.5, 0.5]))


def test_gridworld_layout(gridworld):
    """Moving into the goal pays 1; the goal is absorbing with reward 0."""
    goal = 8
    assert gridworld.expert_reward[7, 3] == 1.0  # right from (2, 1)
    assert gridworld.expert_reward[5, 1] == 1.0  # down from (1, 2)
    np.testing.assert_array_equal(gridworld.expert_reward[goal], 0.0)
    np.testing.assert_array_equal(gridworld.transition[goal, :, goal], 1.0)
    assert gridworld.initial_dist[goal] == 0.0


def test_gridworld_walls_keep_agent_in_place(gridworld):
    """Moving up from the top row leaves the state unchanged."""
    assert gridworld.transition[0, 0, 0] == 1.0
    assert gridworld.transition[0, 2, 0] == 1.0


def test_gridworld_slip_spreads_mass():
    """With slip the intended move keeps 1 - p + p / 4 of the mass."""
    grid = make_gridworld(3, 3, (2, 2), slip_prob=0.2)
    assert math.isclose(grid.transition[4, 3, 5], 0.8 + 0.05)


def test_gridworld_goal_outside_grid():
    """A goal cell outside the grid is a configuration error."""
    with pytest.raises(ConfigurationError, match="outside"):
        make_gridworld(3, 3, (3, 0))


def test_gridworld_pays_goal_once():
    """Walking the shortest path collects the arrival reward once, at step d - 1."""
    grid = make_gridworld(3, 3, (2, 2), gamma=0.9)
    # right along the row, then down the last column
    actions = np.array([3 if s % 3 < 2 else 1 for s in range(9)])
    q = exact_q_evaluation(grid, Policy.deterministic(actions, 4), grid.expert_reward)
    values = q[np.arange(9), actions]
    for s in range(8):
        row, col = divmod(s, 3)
        distance = (2 - row) + (2 - col)
        assert math.isclose(values[s], 0.9 ** (distance - 1), rel_tol=1e-10)
    assert abs(values[8]) < 1e-12


# =============================================================================
# Policies
# =============================================================================


def test_policy_from_weights_uniform_for_empty_rows():
    """All-zero weight rows become uniform."""
    policy = Policy.from_weights(np.array([[0.0, 0.0], [1.0, 3.0]]))
    np.testing.assert_allclose(policy.probs, [[0.5, 0.5], [0.25, 0.75]])


def test_policy_rejects_negative_probabilities():
    with pytest.raises(ConfigurationError, match="negative"):
        Policy(np.array([[1.5, -0.5]]))


def test_policy_from_logits_handles_minus_infinity():
    """-inf logits get probability zero."""
    policy = Policy.from_logits(np.array([[0.0, -np.inf]]))
    np.testing.assert_array_equal(policy.probs, [[1.0, 0.0]])


def test_kl_divergence_values():
    """KL is zero for equal rows and matches the closed form otherwise."""
    p = np.array([[0.5, 0.5], [0.5, 0.5]])
    q = np.array([[0.5, 0.5], [0.25, 0.75]])
    kl = kl_divergence(p, q)
    assert kl[0] == 0.0
    assert math.isclose(kl[1], 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0))


# =============================================================================
# Exact evaluation and control
# =============================================================================


def test_exact_q_satisfies_bellman(small_mdp, uniform_policy):
    """Q = r + gamma P^pi Q to solver precision."""
    r = small_mdp.expert_reward
    q = exact_q_evaluation(small_mdp, uniform_policy, r)
    v = (uniform_policy.probs * q).sum(axis=1)
    np.testing.assert_allclose(q, r + small_mdp.discount * small_mdp.expected_next(v), atol=1e-10)


def test_exact_q_with_zero_discount_is_reward(small_mdp, uniform_policy):
    mdp = dataclasses.replace(small_mdp, discount=0.0)
    np.testing.assert_allclose(exact_q_evaluation(mdp, uniform_policy, mdp.expert_reward), mdp.expert_reward, atol=1e-15)


def test_exact_q_rejects_wrong_reward_shape(small_mdp, uniform_policy):
    with pytest.raises(ConfigurationError, match="shape"):
        exact_q_evaluation(small_mdp, uniform_policy, np.zeros((3, 5)))


def test_soft_value_of_constant_q():
    """A constant row has soft value equal to the constant for any mu."""
    mu = Policy(np.array([[0.2, 0.8]]))
    np.testing.assert_allclose(soft_value(np.array([[1.5, 1.5]]), 0.3, mu), [1.5])


def test_soft_value_iteration_single_step(small_mdp):
    """With gamma = 0, Q* = r and V* = alpha log E_mu exp(r / alpha)."""
    mdp = dataclasses.replace(small_mdp, discount=0.0)
    mu = Policy.uniform(5, 3)
    alpha = 0.5
    q, v, pi = soft_value_iteration(mdp, mdp.expert_reward, alpha, mu)
    expected_v = alpha * np.log(np.mean(np.exp(mdp.expert_reward / alpha), axis=1))
    np.testing.assert_allclose(q, mdp.expert_reward)
    np.testing.assert_allclose(v, expected_v, atol=1e-12)
    np.testing.assert_allclose(pi.probs, soft_policy(q, alpha, mu).probs)


def test_soft_value_iteration_fixed_point(small_mdp, uniform_policy):
    """The returned Q satisfies the soft Bellman optimality equation."""
    alpha = 0.7
    q, v, _ = soft_value_iteration(small_mdp, small_mdp.expert_reward, alpha, uniform_policy)
    backup = small_mdp.expert_reward + small_mdp.discount * small_mdp.expected_next(v)
    np.testing.assert_allclose(q, backup, atol=1e-9)


def test_soft_optimal_policy_attains_soft_value(small_mdp, uniform_policy):
    """The KL-regularized return of pi* equals the start value of V*."""
    alpha = 0.7
    _, v, pi = soft_value_iteration(small_mdp, small_mdp.expert_reward, alpha, uniform_policy)
    value = soft_policy_value(small_mdp, pi, small_mdp.expert_reward, alpha, uniform_policy)
    assert math.isclose(value, float(small_mdp.initial_dist @ v), abs_tol=1e-8)


def test_soft_value_iteration_rejects_nonpositive_alpha(small_mdp, uniform_policy):
    with pytest.raises(ConfigurationError, match="alpha"):
        soft_value_iteration(small_mdp, small_mdp.expert_reward, 0.0, uniform_policy)


def test_evaluate_policy_return_one_step(small_mdp, uniform_policy):
    """With gamma = 0 the return is the start-weighted expected reward."""
    mdp = dataclasses.replace(small_mdp, discount=0.0)
    expected = float(mdp.initial_dist @ (uniform_policy.probs * mdp.expert_reward).sum(axis=1))
    assert math.isclose(evaluate_policy_return(mdp, uniform_policy), expected)


def test_optimal_gridworld_policy_beats_uniform(gridworld):
    """A near-greedy soft policy reaches the goal far more reliably."""
    mu = Policy.uniform(gridworld.n_states, gridworld.n_actions)
    _, _, pi = soft_value_iteration(gridworld, gridworld.expert_reward, 0.01, mu)
    assert evaluate_policy_return(gridworld, pi) > evaluate_policy_return(gridworld, mu)


# =============================================================================
# Rollouts
# =============================================================================


def test_rollout_is_reproducible(small_mdp, uniform_policy):
    a = rollout(small_mdp, uniform_policy, 20, seed=4)
    b = rollout(small_mdp, uniform_policy, 20, seed=4)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.actions, b.actions)


def test_rollout_follows_dynamics(small_mdp, uniform_policy):
    """Every sampled transition has positive probability."""
    traj = rollout(small_mdp, uniform_policy, 30, seed=0)
    assert len(traj) == 30
    for s, a, sp in traj.transitions():
        assert small_mdp.transition[s, a, sp] > 0


def test_rollout_respects_fixed_start(small_mdp, uniform_policy):
    traj = rollout(small_mdp, uniform_policy, 5, seed=0, initial_state=3)
    assert traj.states[0] == 3


def test_rollout_rejects_zero_horizon(small_mdp, uniform_policy):
    with pytest.raises(ConfigurationError, match="horizon"):
        rollout(small_mdp, uniform_policy, 0, seed=0)


# =============================================================================
# Sampling statistics
# =============================================================================


def _two_state_chain():
    transition = np.array(
        [
            [[0.1, 0.9], [0.5, 0.5]],
            [[0.8, 0.2], [0.4, 0.6]],
        ]
    )
    return TabularMdp(transition, np.zeros((2, 2)), 0.9, np.array([1.0, 0.0]))


def test_rollout_visits_match_stationary_distribution():
    """A long uniform-policy rollout spends time in each state as the chain's eigenvector says."""
    mdp = _two_state_chain()
    policy = Policy.uniform(2, 2)
    chain = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    eigvals, eigvecs = np.linalg.eig(chain.T)
    stationary = np.real(eigvecs[:, np.argmin(np.abs(eigvals - 1.0))])
    stationary /= stationary.sum()

    traj = rollout(mdp, policy, 10_000, seed=11)
    visits = np.bincount(traj.states[:-1], minlength=2) / 10_000
    np.testing.assert_allclose(visits, stationary, atol=0.02)


def test_policy_return_matches_monte_carlo(small_mdp, uniform_policy):
    """Discounted returns of sampled rollouts average to the exact value."""
    mdp = dataclasses.replace(small_mdp, discount=0.5)
    horizon, n = 40, 10_000
    rng = np.random.default_rng(5)
    discounts = 0.5 ** np.arange(horizon)
    returns = np.empty(n)
    for i in range(n):
        traj = rollout(mdp, uniform_policy, horizon, rng)
        returns[i] = mdp.expert_reward[traj.states[:-1], traj.actions] @ discounts
    stderr = returns.std(ddof=1) / math.sqrt(n)
    assert abs(returns.mean() - evaluate_policy_return(mdp, uniform_policy)) <= 4 * stderr


# =============================================================================
# Documents
# =============================================================================


@pytest.mark.parametrize("name", ["env.json", "env.msgpack"])
def test_mdp_file_roundtrip(tmp_path, small_mdp, name):
    """Saved MDPs load back value-exactly."""
    path = tmp_path / name
    save_mdp(path, small_mdp, config_hash="abc")
    loaded = load_mdp(path)
    np.testing.assert_array_equal(loaded.transition, small_mdp.transition)
    np.testing.assert_array_equal(loaded.expert_reward, small_mdp.expert_reward)
    np.testing.assert_array_equal(loaded.initial_dist, small_mdp.initial_dist)
    assert loaded.discount == small_mdp.discount
    assert loaded.metadata == small_mdp.metadata


def test_mdp_document_missing_key(small_mdp):
    doc = mdp_to_dict(small_mdp)
    del doc["transition"]
    with pytest.raises(ConfigurationError, match="missing"):
        dict_to_mdp(doc)


def test_mdp_document_size_mismatch(small_mdp):
    doc = mdp_to_dict(small_mdp)
    doc["n_states"] = 6
    with pytest.raises(ConfigurationError, match="declared sizes"):
        dict_to_mdp(doc)


def test_unknown_extension_has_no_codec(tmp_path, small_mdp):
    with pytest.raises(ValueError, match="No document codec"):
        save_mdp(tmp_path / "env.txt", small_mdp)
