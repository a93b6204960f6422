"""Value updates: linex (soft value), expectile, and the policy-based estimate."""

from __future__ import annotations

import math

import numpy as np
import numpy.typing as npt

from .._errors import ConfigurationError, TrainingDivergenceError
from ..approx import FunctionApprox, OptimizerState

FloatArray = npt.NDArray[np.float64]


def linex_loss(
    q_values: npt.ArrayLike, v_values: npt.ArrayLike, alpha: float, z_max: float = 10.0
) -> tuple[float, FloatArray]:
    """Mean of ``exp(z) - z - 1`` with ``z = (Q - V) / alpha``.

    Above ``z_max`` the exponential is continued linearly (value and slope
    match at ``z_max``), so large residuals cannot overflow.

    Returns
    -------
    tuple[float, np.ndarray]
        Loss and its gradient w.r.t. each ``V`` entry.
    """
    if alpha <= 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha!r}")
    q = np.asarray(q_values, dtype=np.float64)
    v = np.asarray(v_values, dtype=np.float64)
    z = (q - v) / alpha
    clipped = np.minimum(z, z_max)
    ez = np.exp(clipped)
    losses = np.where(z > z_max, math.exp(z_max) * (z - z_max + 1.0), ez) - z - 1.0
    dloss_dz = ez - 1.0
    n = max(z.shape[0], 1)
    loss = float(np.sum(losses) / n)
    if not math.isfinite(loss):
        raise TrainingDivergenceError(f"linex loss overflowed (max z={float(np.max(z)):.3e})")
    return loss, -dloss_dz / (alpha * n)


def expectile_loss(
    q_values: npt.ArrayLike, v_values: npt.ArrayLike, tau: float
) -> tuple[float, FloatArray]:
    """Mean of ``|tau - 1(Q - V < 0)| * (Q - V)**2`` and its gradient w.r.t. ``V``."""
    if not 0 < tau < 1:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau!r}")
    u = np.asarray(q_values, dtype=np.float64) - np.asarray(v_values, dtype=np.float64)
    weight = np.where(u < 0, 1.0 - tau, tau)
    n = max(u.shape[0], 1)
    return float(np.sum(weight * u**2) / n), -2.0 * weight * u / n


def _value_step(
    v: FunctionApprox,
    optimizer: OptimizerState,
    states: npt.ArrayLike,
    loss: float,
    grad_v: FloatArray,
) -> float:
    optimizer.apply(v.params.values, v.backward(states, None, grad_v))
    return loss


def value_update_xql(
    v: FunctionApprox,
    q_target: npt.ArrayLike,
    alpha: float,
    states: npt.ArrayLike,
    optimizer: OptimizerState,
    *,
    z_max: float = 10.0,
) -> float:
    """One optimizer step of ``V`` on the linex loss; returns the pre-step loss.

    ``q_target`` holds ``Q_target(s, a)`` for each batch row, ``states`` the row states.
    """
    loss, grad_v = linex_loss(q_target, v.forward(states), alpha, z_max)
    return _value_step(v, optimizer, states, loss, grad_v)


def value_update_iql(
    v: FunctionApprox,
    q_target: npt.ArrayLike,
    tau: float,
    states: npt.ArrayLike,
    optimizer: OptimizerState,
) -> float:
    """One optimizer step of ``V`` on the expectile loss; returns the pre-step loss."""
    loss, grad_v = expectile_loss(q_target, v.forward(states), tau)
    return _value_step(v, optimizer, states, loss, grad_v)


def value_estimate_awac(
    q_rows: npt.ArrayLike, policy_rows: npt.ArrayLike, *, mode: str = "expectation"
) -> FloatArray:
    """Value of each state under the current policy, without V parameters.

    ``mode="expectation"`` returns ``sum_a pi(a|s) Q(s, a)`` (tabular runs);
    ``mode="greedy"`` returns ``Q(s, argmax_a pi(a|s))`` (network runs).
    """
    q = np.asarray(q_rows, dtype=np.float64)
    pi = np.asarray(policy_rows, dtype=np.float64)
    if mode == "expectation":
        return np.sum(pi * q, axis=-1)
    if mode == "greedy":
        return np.take_along_axis(q, np.argmax(pi, axis=-1)[..., None], axis=-1)[..., 0]
    raise ConfigurationError(f"Unsupported AWAC value mode {mode!r} (expected 'expectation' or 'greedy')")


def weighted_expectile(
    values: npt.ArrayLike, weights: npt.ArrayLike, tau: float, *, tol: float = 1e-14, max_iterations: int = 200
) -> float:
    """Exact ``tau``-expectile of a weighted discrete distribution.

    Solved by iteratively reweighted averaging; the fixed point is reached in
    finitely many steps because the asymmetric weights only change when the
    estimate crosses a support point.
    """
    x = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        raise ConfigurationError("expectile weights must have positive mass")
    v = float(np.sum(w * x) / np.sum(w))
    for _ in range(max_iterations):
        asym = w * np.where(x < v, 1.0 - tau, tau)
        nxt = float(np.sum(asym * x) / np.sum(asym))
        if abs(nxt - v) <= tol * max(1.0, abs(v)):
            return nxt
        v = nxt
    return v
