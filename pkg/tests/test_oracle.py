"""Tests for the exact reward oracle, the oracle policies and the gap report."""

from __future__ import annotations

import math

import numpy as np
import pytest

from iplearn import (
    ComparisonRefusedError,
    ConfigurationError,
    EvaluationError,
    OracleError,
    OracleReport,
    Policy,
    PreferencePair,
    Segment,
    TabularFn,
    compare_to_oracle,
    oracle_policy,
    solve_rstar,
    soft_value_iteration,
    train_ipl,
    verify_bijection,
)
from iplearn.ipl import IplConfig, ValueTarget, ipl_loss, weighted_expectile
from iplearn.oracle import build_design, expectile_value_iteration, rstar_gradient, rstar_hessian, rstar_objective


@pytest.fixture
def design(pref_dataset):
    return build_design(pref_dataset, 5, 3)


# =============================================================================
# Design and objective
# =============================================================================


def test_design_rows(single_step_pairs):
    d = build_design(single_step_pairs, 2, 2)
    np.testing.assert_array_equal(d.matrix, [[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 1.0]])
    np.testing.assert_array_equal(d.labels, [1.0, 0.0])
    assert d.n_pairs == 2


def test_design_accumulates_repeated_visits():
    pair = PreferencePair(Segment((0, 0, 0), (1, 1)), Segment((1, 2, 3), (0, 0)), 1.0)
    d = build_design([pair], 5, 3, discount_in_segment=True, gamma=0.5)
    assert d.matrix[0, 1] == 1.5
    assert d.matrix[0, 3] == -1.0
    assert d.matrix[0, 6] == -0.5


def test_design_rejects_out_of_range(single_step_pairs):
    with pytest.raises(EvaluationError):
        build_design(single_step_pairs, 1, 2)


def test_objective_matches_full_space_ipl_loss(pref_dataset, design):
    """With a zero value target the full-space IPL loss is the oracle objective."""
    rng = np.random.default_rng(4)
    reward = TabularFn(5, 3, "reward", rng.normal(size=(5, 3)))
    config = IplConfig(gamma=0.9, k=3, lam=0.8, regularize_full_space=True)
    result = ipl_loss(reward, ValueTarget.zero(5, 3), config, pref_dataset.pairs)
    assert math.isclose(result.loss, rstar_objective(design, reward.table, 0.8, 15), rel_tol=1e-12)
    np.testing.assert_allclose(result.grad, rstar_gradient(design, reward.table, 0.8, 15), atol=1e-12)


def test_gradient_and_hessian(design, numeric_grad):
    r = np.random.default_rng(5).normal(size=15)
    numeric = numeric_grad(lambda: rstar_objective(design, r, 0.3, 15), r)
    np.testing.assert_allclose(rstar_gradient(design, r, 0.3, 15), numeric, rtol=1e-6, atol=1e-9)
    hess = rstar_hessian(design, r, 0.3, 15)
    column = numeric_grad(lambda: rstar_gradient(design, r, 0.3, 15)[4], r)
    np.testing.assert_allclose(hess[4], column, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(hess, hess.T)


# =============================================================================
# Solver
# =============================================================================


def test_solve_rstar_is_stationary(design):
    report = solve_rstar(design, 0.5, 15)
    assert report.residual <= 1e-10
    assert report.min_hessian_eigenvalue > 0
    assert report.table.shape == (5, 3)
    np.testing.assert_allclose(rstar_gradient(design, report.rstar, 0.5, 15), 0.0, atol=1e-10)


def test_solve_rstar_is_a_minimum(design):
    report = solve_rstar(design, 0.5, 15)
    best = rstar_objective(design, report.rstar, 0.5, 15)
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert best <= rstar_objective(design, report.rstar + 1e-3 * rng.normal(size=15), 0.5, 15)


def test_single_pair_solution():
    """Coordinates outside the pair stay at zero and the pair splits symmetrically."""
    pair = PreferencePair(Segment((0, 0), (0,)), Segment((0, 0), (1,)), 1.0)
    report = solve_rstar(build_design([pair], 2, 2), 1.0, 4)
    r = report.rstar
    assert r[2] == 0.0 and r[3] == 0.0
    assert r[0] > 0
    assert r[1] == pytest.approx(-r[0], abs=1e-12)
    # stationarity in closed form: sigmoid(2 r_a) - 1 + 2 lam r_a / n = 0
    assert (1.0 / (1.0 + math.exp(-2.0 * r[0]))) - 1.0 + 2.0 * r[0] / 4 == pytest.approx(0.0, abs=1e-10)


def test_indifferent_labels_give_zero_reward(single_step_pairs):
    ties = [PreferencePair(p.first, p.second, 0.5) for p in single_step_pairs]
    report = solve_rstar(build_design(ties, 2, 2), 0.5)
    np.testing.assert_array_equal(report.rstar, 0.0)
    assert report.iterations == 0


def test_larger_lambda_shrinks_reward(design):
    small = solve_rstar(design, 0.1, 15)
    large = solve_rstar(design, 10.0, 15)
    assert np.linalg.norm(large.rstar) < np.linalg.norm(small.rstar)


@pytest.mark.parametrize("lam", [0.0, -1.0])
def test_solve_rstar_needs_positive_lambda(design, lam):
    with pytest.raises(ConfigurationError, match="lambda > 0"):
        solve_rstar(design, lam)


def test_report_roundtrip(design):
    report = solve_rstar(design, 0.5, 15)
    loaded = OracleReport.from_dict(report.to_dict())
    np.testing.assert_array_equal(loaded.rstar, report.rstar)
    assert loaded.lam == 0.5
    assert loaded.n_total == 15


# =============================================================================
# Oracle policies
# =============================================================================


def test_verify_bijection(small_mdp, uniform_policy):
    reward = np.random.default_rng(1).normal(size=(5, 3))
    assert verify_bijection(small_mdp, uniform_policy, reward) < 1e-10


def test_xql_oracle_is_soft_optimum(small_mdp, uniform_policy):
    reward = small_mdp.expert_reward
    solution = oracle_policy(small_mdp, reward, 0.5, uniform_policy, variant="xql")
    q, _, pi = soft_value_iteration(small_mdp, reward, 0.5, uniform_policy)
    np.testing.assert_allclose(solution.q, q)
    np.testing.assert_allclose(solution.policy.probs, pi.probs)
    np.testing.assert_allclose(solution.implicit_reward(small_mdp), reward, atol=1e-8)


def test_iql_oracle_fixed_point(small_mdp, uniform_policy):
    reward = small_mdp.expert_reward
    q, v = expectile_value_iteration(small_mdp, reward, 0.7, uniform_policy)
    for s in range(small_mdp.n_states):
        assert v[s] == pytest.approx(weighted_expectile(q[s], uniform_policy.probs[s], 0.7), abs=1e-8)
    solution = oracle_policy(small_mdp, reward, 1.0, uniform_policy, variant="iql", tau=0.7)
    np.testing.assert_allclose(solution.implicit_reward(small_mdp), reward, atol=1e-8)
    np.testing.assert_allclose(solution.policy.probs.sum(axis=1), 1.0)


def test_awac_has_no_oracle(small_mdp, uniform_policy):
    with pytest.raises(OracleError, match="no exact oracle"):
        oracle_policy(small_mdp, small_mdp.expert_reward, 1.0, uniform_policy, variant="awac")


# =============================================================================
# Comparison
# =============================================================================


@pytest.fixture
def trained(quick_config, pref_dataset, small_mdp):
    return train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp)


def test_compare_to_oracle(trained, design, small_mdp):
    report = solve_rstar(design, trained.config.lam, 15)
    solution = oracle_policy(small_mdp, report.table, trained.config.alpha, trained.behavior_policy)
    gap = compare_to_oracle(trained, report, solution, small_mdp)
    assert gap.reward_gap >= 0.0
    assert gap.kl_per_state.shape == (5,)
    assert gap.max_kl >= 0.0
    assert gap.return_gap is not None
    assert gap.support_size == int(trained.support_mask.sum())


def test_compare_refuses_lambda_mismatch(trained, design, small_mdp):
    report = solve_rstar(design, 2.0, 15)
    solution = oracle_policy(small_mdp, report.table, trained.config.alpha, trained.behavior_policy)
    with pytest.raises(ComparisonRefusedError, match="lambda"):
        compare_to_oracle(trained, report, solution)


def test_compare_refuses_variant_mismatch(trained, design, small_mdp):
    report = solve_rstar(design, trained.config.lam, 15)
    solution = oracle_policy(small_mdp, report.table, 1.0, trained.behavior_policy, variant="iql")
    with pytest.raises(ComparisonRefusedError, match="variant"):
        compare_to_oracle(trained, report, solution)


def test_compare_refuses_without_implicit_reward(quick_config, pref_dataset, design, small_mdp):
    artifacts = train_ipl(quick_config, pref_dataset)
    report = solve_rstar(design, quick_config.lam, 15)
    solution = oracle_policy(small_mdp, report.table, 1.0, Policy.uniform(5, 3))
    with pytest.raises(ComparisonRefusedError, match="no implicit-reward table") as info:
        compare_to_oracle(artifacts, report, solution)
    assert isinstance(info.value, ValueError)
