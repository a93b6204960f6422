"""Advantage-weighted policy extraction."""

from __future__ import annotations

import math

import numpy as np
import numpy.typing as npt
from scipy.special import log_softmax, softmax

from ..approx import FunctionApprox, OptimizerState
from ..mdp import Policy

FloatArray = npt.NDArray[np.float64]


def awr_weights(advantages: npt.ArrayLike, beta: float, weight_max: float) -> FloatArray:
    """``min(exp(beta * adv), weight_max)`` without overflow."""
    scaled = beta * np.asarray(advantages, dtype=np.float64)
    return np.exp(np.minimum(scaled, math.log(weight_max)))


def behavior_distribution(counts: npt.ArrayLike) -> Policy:
    """Empirical action frequencies per state; states without data are uniform."""
    return Policy.from_weights(np.asarray(counts, dtype=np.float64))


def extract_policy_awr(
    q_table: npt.ArrayLike,
    v_table: npt.ArrayLike,
    beta: float,
    behavior_weights: npt.ArrayLike,
    weight_max: float = 100.0,
) -> Policy:
    """Closed-form advantage-weighted policy for tabular functions.

    ``pi(a|s) ∝ n(s, a) * min(exp(beta * (Q(s, a) - V(s))), weight_max)``
    where ``n`` are the behavior weights (visit counts or ``mu``).  States
    with no behavior mass get the uniform policy.
    """
    q = np.asarray(q_table, dtype=np.float64)
    v = np.asarray(v_table, dtype=np.float64)
    weights = np.asarray(behavior_weights, dtype=np.float64) * awr_weights(q - v[:, None], beta, weight_max)
    return Policy.from_weights(weights)


def awr_policy_step(
    policy_fn: FunctionApprox,
    states: npt.ArrayLike,
    actions: npt.ArrayLike,
    advantages: npt.ArrayLike,
    beta: float,
    weight_max: float,
    optimizer: OptimizerState,
) -> float:
    """One ascent step on ``E[w * log pi(a|s)]`` for a logits network.

    Returns the pre-step weighted negative log-likelihood.
    """
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    n = max(states.shape[0], 1)
    w = awr_weights(advantages, beta, weight_max)
    logits = policy_fn.forward(states)
    probs = softmax(logits, axis=1)
    picked = log_softmax(logits, axis=1)[np.arange(states.shape[0]), actions]
    loss = float(-np.sum(w * picked) / n)
    onehot = np.zeros_like(probs)
    onehot[np.arange(states.shape[0]), actions] = 1.0
    upstream = -(w[:, None] * (onehot - probs)) / n
    optimizer.apply(policy_fn.params.values, policy_fn.backward(states, None, upstream))
    return loss
