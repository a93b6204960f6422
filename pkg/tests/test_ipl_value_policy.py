"""Tests for the value losses, value updates and advantage-weighted policy extraction."""

from __future__ import annotations

import math

import numpy as np
import pytest

from iplearn import ConfigurationError, MlpFn, SgdState, TabularFn, TrainingDivergenceError
from iplearn.ipl import (
    awr_policy_step,
    awr_weights,
    behavior_distribution,
    expectile_loss,
    extract_policy_awr,
    linex_loss,
    value_estimate_awac,
    value_update_iql,
    value_update_xql,
    weighted_expectile,
)

Q_SAMPLES = np.array([0.0, 1.0, 2.0, -0.5])


# =============================================================================
# Losses
# =============================================================================


def test_linex_is_zero_at_equality():
    loss, grad = linex_loss([1.0, -2.0], [1.0, -2.0], alpha=0.5)
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_linex_gradient(numeric_grad):
    v = np.array([0.3, 0.1, 2.5, -1.0])
    _, grad = linex_loss(Q_SAMPLES, v, alpha=0.8)
    numeric = numeric_grad(lambda: linex_loss(Q_SAMPLES, v, alpha=0.8)[0], v)
    np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-10)


def test_linex_continues_linearly_past_z_max():
    """Huge residuals give a finite loss that matches the exponential at the seam."""
    loss, _ = linex_loss([1e6], [0.0], alpha=1.0, z_max=10.0)
    assert math.isfinite(loss)
    assert math.isclose(loss, math.exp(10.0) * (1e6 - 9.0) - 1e6 - 1.0)
    at_seam, _ = linex_loss([10.0], [0.0], alpha=1.0, z_max=10.0)
    assert math.isclose(at_seam, math.exp(10.0) - 11.0)


def test_linex_rejects_nonpositive_alpha():
    with pytest.raises(ConfigurationError, match="alpha"):
        linex_loss([0.0], [0.0], alpha=0.0)


def test_linex_overflow_is_divergence():
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergenceError, match="linex"):
            linex_loss([1e308], [-1e308], alpha=1.0)


def test_expectile_at_half_is_half_mse():
    loss, _ = expectile_loss(Q_SAMPLES, np.zeros(4), tau=0.5)
    assert math.isclose(loss, 0.5 * float(np.mean(Q_SAMPLES**2)))


def test_expectile_gradient(numeric_grad):
    v = np.array([0.3, 1.7, 2.5, -1.0])
    _, grad = expectile_loss(Q_SAMPLES, v, tau=0.8)
    numeric = numeric_grad(lambda: expectile_loss(Q_SAMPLES, v, tau=0.8)[0], v)
    np.testing.assert_allclose(grad, numeric, rtol=1e-6, atol=1e-10)


@pytest.mark.parametrize("tau", [0.0, 1.0])
def test_expectile_rejects_degenerate_tau(tau):
    with pytest.raises(ConfigurationError, match="tau"):
        expectile_loss([0.0], [0.0], tau=tau)


# =============================================================================
# Expectiles and value updates
# =============================================================================


def test_weighted_expectile_at_half_is_weighted_mean():
    weights = np.array([1.0, 2.0, 0.5, 0.5])
    expected = float(np.sum(weights * Q_SAMPLES) / np.sum(weights))
    assert math.isclose(weighted_expectile(Q_SAMPLES, weights, 0.5), expected)


@pytest.mark.parametrize("tau", [0.1, 0.7, 0.95])
def test_weighted_expectile_first_order_condition(tau):
    weights = np.array([1.0, 2.0, 0.5, 0.5])
    v = weighted_expectile(Q_SAMPLES, weights, tau)
    asym = np.where(Q_SAMPLES < v, 1.0 - tau, tau)
    assert abs(float(np.sum(weights * asym * (Q_SAMPLES - v)))) < 1e-12


def test_weighted_expectile_is_monotone_in_tau():
    weights = np.ones(4)
    values = [weighted_expectile(Q_SAMPLES, weights, tau) for tau in (0.2, 0.5, 0.8)]
    assert values[0] < values[1] < values[2] < Q_SAMPLES.max()


def test_weighted_expectile_needs_mass():
    with pytest.raises(ConfigurationError, match="positive mass"):
        weighted_expectile(Q_SAMPLES, np.zeros(4), 0.7)


def test_xql_update_reaches_soft_value():
    """Linex regression of one state's V converges to alpha log mean exp(Q / alpha)."""
    alpha = 1.0
    v = TabularFn(1, None, "v")
    states = np.zeros(4, dtype=np.int64)
    optimizer = SgdState(0.5)
    for _ in range(500):
        value_update_xql(v, Q_SAMPLES, alpha, states, optimizer)
    expected = alpha * math.log(float(np.mean(np.exp(Q_SAMPLES / alpha))))
    assert v.table[0] == pytest.approx(expected, rel=1e-8)


def test_iql_update_reaches_expectile():
    v = TabularFn(1, None, "v")
    states = np.zeros(4, dtype=np.int64)
    optimizer = SgdState(0.5)
    for _ in range(500):
        value_update_iql(v, Q_SAMPLES, 0.7, states, optimizer)
    assert v.table[0] == pytest.approx(weighted_expectile(Q_SAMPLES, np.ones(4), 0.7), rel=1e-8)


def test_value_update_returns_pre_step_loss():
    v = TabularFn(1, None, "v")
    loss = value_update_iql(v, [2.0], 0.5, [0], SgdState(0.1))
    assert loss == 0.5 * 4.0
    assert v.table[0] != 0.0


def test_awac_value_modes():
    q = np.array([[1.0, 3.0], [2.0, 0.0]])
    pi = np.array([[0.25, 0.75], [0.9, 0.1]])
    np.testing.assert_allclose(value_estimate_awac(q, pi), [2.5, 1.8])
    np.testing.assert_array_equal(value_estimate_awac(q, pi, mode="greedy"), [3.0, 2.0])
    with pytest.raises(ConfigurationError, match="Unsupported AWAC value mode"):
        value_estimate_awac(q, pi, mode="max")


# =============================================================================
# Policy extraction
# =============================================================================


def test_awr_weights_are_capped():
    weights = awr_weights(np.array([-1.0, 0.0, 1e6]), beta=3.0, weight_max=100.0)
    assert math.isclose(weights[0], math.exp(-3.0))
    assert weights[1] == 1.0
    assert math.isclose(weights[2], 100.0)


def test_behavior_distribution_counts():
    policy = behavior_distribution(np.array([[3.0, 1.0], [0.0, 0.0]]))
    np.testing.assert_allclose(policy.probs, [[0.75, 0.25], [0.5, 0.5]])


def test_extract_policy_awr_closed_form():
    q = np.array([[1.0, 0.0], [0.0, 0.0]])
    v = np.array([0.0, 0.0])
    counts = np.array([[1.0, 1.0], [0.0, 0.0]])
    policy = extract_policy_awr(q, v, beta=2.0, behavior_weights=counts)
    e2 = math.exp(2.0)
    np.testing.assert_allclose(policy.probs[0], [e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)])
    np.testing.assert_allclose(policy.probs[1], [0.5, 0.5])


def test_extract_policy_awr_stays_in_support():
    """Actions without behavior mass get probability zero however large their Q."""
    q = np.array([[0.0, 50.0]])
    policy = extract_policy_awr(q, np.zeros(1), beta=1.0, behavior_weights=np.array([[2.0, 0.0]]))
    np.testing.assert_array_equal(policy.probs, [[1.0, 0.0]])


def test_awr_policy_step_raises_likelihood():
    policy_fn = MlpFn(3, 2, "policy", (4,), seed=0)
    states = np.array([0, 1, 2, 0])
    actions = np.array([1, 1, 0, 1])
    optimizer = SgdState(0.1)
    first = awr_policy_step(policy_fn, states, actions, np.zeros(4), 1.0, 100.0, optimizer)
    for _ in range(20):
        last = awr_policy_step(policy_fn, states, actions, np.zeros(4), 1.0, 100.0, optimizer)
    assert last < first
