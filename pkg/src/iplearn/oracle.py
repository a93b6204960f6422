"""Exact oracles for tabular preference learning.

``solve_rstar`` finds the unique minimizer of the regularized preference loss
over reward tables by Newton's method; ``oracle_policy`` computes the policy
the chosen offline algorithm would reach for that reward; ``compare_to_oracle``
measures how close a trained run came to both.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
import scipy.linalg as spl
from scipy.special import expit

from ._errors import ComparisonRefusedError, ConfigurationError, ConvergenceError, OracleError
from .data import PreferenceDataset, PreferencePair, segment_weights
from .ipl import TrainArtifacts, extract_policy_awr, preference_bce, weighted_expectile
from .mdp import (
    Policy,
    TabularMdp,
    evaluate_policy_return,
    exact_q_evaluation,
    kl_divergence,
    policy_transition_matrix,
    soft_value_iteration,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class ComparisonDesign:
    """Preference pairs as rows of a logistic-regression design over reward tables.

    Row ``i`` holds ``+w_t`` at the first segment's ``(s, a)`` visits and
    ``-w_t`` at the second's (accumulating on repeats), so the pair's logit
    is ``matrix[i] @ r`` for a flattened reward table ``r``.
    """

    matrix: FloatArray
    labels: FloatArray
    n_states: int
    n_actions: int
    discount_in_segment: bool = False
    gamma: float = 1.0

    @property
    def n_pairs(self) -> int:
        return self.matrix.shape[0]

    def logits(self, reward: npt.ArrayLike) -> FloatArray:
        return self.matrix @ np.asarray(reward, dtype=np.float64).ravel()


def build_design(
    pref_dataset: PreferenceDataset | Sequence[PreferencePair],
    n_states: int,
    n_actions: int,
    discount_in_segment: bool = False,
    *,
    gamma: float = 1.0,
) -> ComparisonDesign:
    """Assemble the design matrix and label vector of a set of pairs."""
    pairs = pref_dataset.pairs if isinstance(pref_dataset, PreferenceDataset) else tuple(pref_dataset)
    matrix = np.zeros((len(pairs), n_states * n_actions))
    labels = np.empty(len(pairs))
    for i, pair in enumerate(pairs):
        pair.first.check_range(n_states, n_actions)
        pair.second.check_range(n_states, n_actions)
        w = segment_weights(pair.k, gamma, discount_in_segment)
        first = pair.first.visited_states() * n_actions + pair.first.action_array()
        second = pair.second.visited_states() * n_actions + pair.second.action_array()
        np.add.at(matrix[i], first, w)
        np.add.at(matrix[i], second, -w)
        labels[i] = pair.label
    return ComparisonDesign(matrix, labels, n_states, n_actions, discount_in_segment, gamma)


@dataclass(frozen=True)
class OracleReport:
    """Certified minimizer of the regularized preference objective."""

    rstar: FloatArray
    residual: float
    min_hessian_eigenvalue: float
    iterations: int
    lam: float
    n_total: int
    n_states: int
    n_actions: int
    discount_in_segment: bool = False
    gamma: float = 1.0

    @property
    def table(self) -> FloatArray:
        """``r*`` as a ``[state][action]`` table."""
        return self.rstar.reshape(self.n_states, self.n_actions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rstar": self.rstar,
            "residual": self.residual,
            "min_hessian_eigenvalue": self.min_hessian_eigenvalue,
            "iterations": self.iterations,
            "lambda": self.lam,
            "n_total": self.n_total,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount_in_segment": self.discount_in_segment,
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> OracleReport:
        return cls(
            rstar=np.asarray(data["rstar"], dtype=np.float64),
            residual=float(data["residual"]),
            min_hessian_eigenvalue=float(data["min_hessian_eigenvalue"]),
            iterations=int(data["iterations"]),
            lam=float(data["lambda"]),
            n_total=int(data["n_total"]),
            n_states=int(data["n_states"]),
            n_actions=int(data["n_actions"]),
            discount_in_segment=bool(data.get("discount_in_segment", False)),
            gamma=float(data.get("gamma", 1.0)),
        )


def rstar_objective(design: ComparisonDesign, reward: npt.ArrayLike, lam: float, n_total: int) -> float:
    """Mean pair BCE plus ``lam * sum(r**2) / n_total``."""
    r = np.asarray(reward, dtype=np.float64).ravel()
    bce = float(np.mean(preference_bce(design.logits(r), design.labels))) if design.n_pairs else 0.0
    return bce + lam * float(r @ r) / n_total


def rstar_gradient(design: ComparisonDesign, reward: npt.ArrayLike, lam: float, n_total: int) -> FloatArray:
    r = np.asarray(reward, dtype=np.float64).ravel()
    grad = 2.0 * lam * r / n_total
    if design.n_pairs:
        grad = grad + design.matrix.T @ (expit(design.logits(r)) - design.labels) / design.n_pairs
    return grad


def rstar_hessian(design: ComparisonDesign, reward: npt.ArrayLike, lam: float, n_total: int) -> FloatArray:
    """``X^T D X / m + (2 lam / n_total) I`` with ``D = diag(p (1 - p))``."""
    r = np.asarray(reward, dtype=np.float64).ravel()
    hess = (2.0 * lam / n_total) * np.eye(r.shape[0])
    if design.n_pairs:
        p = expit(design.logits(r))
        weighted = design.matrix * (p * (1.0 - p))[:, None]
        hess += design.matrix.T @ weighted / design.n_pairs
    return hess


def solve_rstar(
    design: ComparisonDesign,
    lam: float,
    n_total: int | None = None,
    *,
    tol: float = 1e-10,
    max_iterations: int = 100,
) -> OracleReport:
    """Minimize the regularized preference objective over reward tables.

    The objective is the mean binary cross-entropy over pairs plus
    ``lam`` times the mean-square of the reward over all ``n_total``
    coordinates.  Damped Newton steps with the exact Hessian run until the
    gradient sup-norm is at most ``tol``.

    Raises
    ------
    ConfigurationError
        If ``lam <= 0``.
    OracleError
        If Newton's method does not reach ``tol``.
    """
    if lam <= 0:
        raise ConfigurationError(f"the oracle needs lambda > 0 for a unique minimizer, got {lam!r}")
    n = design.matrix.shape[1]
    n_total = n if n_total is None else n_total
    if n_total < 1:
        raise ConfigurationError(f"n_total must be >= 1, got {n_total}")
    r = np.zeros(n)
    grad = rstar_gradient(design, r, lam, n_total)
    iterations = 0
    while float(np.max(np.abs(grad), initial=0.0)) > tol:
        if iterations >= max_iterations:
            raise OracleError(
                f"Newton did not converge in {max_iterations} iterations "
                f"(gradient sup-norm {float(np.max(np.abs(grad))):.3e}, lambda={lam})"
            )
        hess = rstar_hessian(design, r, lam, n_total)
        try:
            direction = spl.cho_solve(spl.cho_factor(hess), grad)
        except spl.LinAlgError as exc:
            raise OracleError(f"Hessian factorization failed: {exc}") from exc
        current = rstar_objective(design, r, lam, n_total)
        step = 1.0
        while True:
            candidate = r - step * direction
            cand_grad = rstar_gradient(design, candidate, lam, n_total)
            decrease = current - rstar_objective(design, candidate, lam, n_total)
            if decrease >= 1e-4 * step * float(grad @ direction) or np.max(np.abs(cand_grad)) < np.max(np.abs(grad)):
                break
            step *= 0.5
            if step < 1e-12:
                raise OracleError(
                    f"line search stalled at gradient sup-norm {float(np.max(np.abs(grad))):.3e}"
                )
        r, grad = candidate, cand_grad
        iterations += 1
        logger.debug(
            "newton iteration %d: step=%g gradient=%.3e", iterations, step, float(np.max(np.abs(grad)))
        )
    min_eig = float(spl.eigvalsh(rstar_hessian(design, r, lam, n_total))[0]) if n else 0.0
    return OracleReport(
        rstar=r,
        residual=float(np.max(np.abs(grad), initial=0.0)),
        min_hessian_eigenvalue=min_eig,
        iterations=iterations,
        lam=lam,
        n_total=n_total,
        n_states=design.n_states,
        n_actions=design.n_actions,
        discount_in_segment=design.discount_in_segment,
        gamma=design.gamma,
    )


def verify_bijection(mdp: TabularMdp, policy: Policy, reward: npt.ArrayLike) -> float:
    """Round-trip ``r -> Q -> r'`` through policy evaluation; returns ``max |r - r'|``."""
    reward = np.asarray(reward, dtype=np.float64)
    q = exact_q_evaluation(mdp, policy, reward)
    p_pi = policy_transition_matrix(mdp, policy)
    recovered = q.ravel() - mdp.discount * (p_pi @ q.ravel())
    return float(np.max(np.abs(reward.ravel() - recovered)))


@dataclass(frozen=True)
class OracleSolution:
    """Optimal ``(Q, V, pi)`` of one offline algorithm for a given reward."""

    q: FloatArray
    v: FloatArray
    policy: Policy
    variant: str
    alpha: float
    beta: float
    tau: float
    expert_return: float

    def implicit_reward(self, mdp: TabularMdp) -> FloatArray:
        return self.q - mdp.discount * mdp.expected_next(self.v)


def expectile_value_iteration(
    mdp: TabularMdp,
    reward: npt.ArrayLike,
    tau: float,
    mu: Policy,
    *,
    tol: float = 1e-10,
    max_iterations: int = 100_000,
) -> tuple[FloatArray, FloatArray]:
    """Fixed point of ``Q = r + gamma E[V(s')]`` with ``V(s)`` the ``mu``-weighted expectile of ``Q(s, .)``."""
    reward = np.asarray(reward, dtype=np.float64)
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for _ in range(max_iterations):
        q = reward + mdp.discount * mdp.expected_next(v)
        v_next = np.array([weighted_expectile(q[s], mu.probs[s], tau) for s in range(mdp.n_states)])
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual < tol:
            return reward + mdp.discount * mdp.expected_next(v), v
    raise ConvergenceError(
        f"expectile value iteration did not converge in {max_iterations} iterations "
        f"(residual {residual:.3e})",
        residual,
    )


def oracle_policy(
    mdp: TabularMdp,
    rstar: npt.ArrayLike,
    alpha: float,
    mu: Policy,
    *,
    variant: Literal["xql", "iql", "awac"] = "xql",
    tau: float = 0.7,
    beta: float = 3.0,
    weight_max: float = 100.0,
) -> OracleSolution:
    """Policy the chosen offline algorithm converges to for reward *rstar*.

    ``xql`` is the KL-regularized optimum (soft value iteration against
    ``mu``).  ``iql`` solves the expectile fixed point and applies the same
    advantage-weighted extraction the learner uses.

    Raises
    ------
    OracleError
        For ``awac``, which has no exact fixed-point oracle, or when the
        fixed-point iteration fails.
    """
    table = np.asarray(rstar, dtype=np.float64).reshape(mdp.n_states, mdp.n_actions)
    try:
        if variant == "xql":
            q, v, policy = soft_value_iteration(mdp, table, alpha, mu)
        elif variant == "iql":
            q, v = expectile_value_iteration(mdp, table, tau, mu)
            policy = extract_policy_awr(q, v, beta, mu.probs, weight_max)
        else:
            raise OracleError(f"no exact oracle for variant {variant!r} (supported: 'xql', 'iql')")
    except ConvergenceError as exc:
        raise OracleError(str(exc)) from exc
    return OracleSolution(q, v, policy, variant, alpha, beta, tau, evaluate_policy_return(mdp, policy))


@dataclass(frozen=True)
class GapReport:
    """Distances between a trained run and the oracle."""

    reward_gap: float
    kl_per_state: FloatArray
    return_gap: float | None
    support_size: int

    @property
    def max_kl(self) -> float:
        return float(np.max(self.kl_per_state))

    def to_dict(self) -> dict[str, Any]:
        return {
            "reward_gap": self.reward_gap,
            "kl_per_state": self.kl_per_state,
            "max_kl": self.max_kl,
            "return_gap": self.return_gap,
            "support_size": self.support_size,
        }


def compare_to_oracle(
    artifacts: TrainArtifacts,
    oracle_report: OracleReport,
    oracle_solution: OracleSolution,
    mdp: TabularMdp | None = None,
) -> GapReport:
    """Measure a trained run against the oracle.

    Reports the sup-norm gap between ``T*Q`` and ``r*`` on the regularized
    support, the per-state ``KL(pi_trained || pi*)`` and the absolute
    difference of ground-truth returns (from *mdp* when given, otherwise the
    last logged ``gt_return``).

    Raises
    ------
    ComparisonRefusedError
        If lambda, alpha, the in-segment discount flag or the variant differ,
        or the artifacts carry no implicit-reward table.
    """
    config = artifacts.config
    mismatches = []
    if config.lam != oracle_report.lam:
        mismatches.append(f"lambda {config.lam!r} != {oracle_report.lam!r}")
    if config.discount_in_segment != oracle_report.discount_in_segment:
        mismatches.append("discount_in_segment differs")
    if config.variant != oracle_solution.variant:
        mismatches.append(f"variant {config.variant!r} != {oracle_solution.variant!r}")
    if oracle_solution.variant == "xql" and config.alpha != oracle_solution.alpha:
        mismatches.append(f"alpha {config.alpha!r} != {oracle_solution.alpha!r}")
    if oracle_solution.variant == "iql" and (config.tau, config.beta) != (oracle_solution.tau, oracle_solution.beta):
        mismatches.append("tau/beta differ")
    if artifacts.implicit_reward is None:
        mismatches.append("artifacts have no implicit-reward table (no evaluation MDP)")
    if mismatches:
        raise ComparisonRefusedError("comparison refused: " + "; ".join(mismatches))
    assert artifacts.implicit_reward is not None

    mask = artifacts.support_mask
    diff = np.abs(artifacts.implicit_reward - oracle_report.table)
    reward_gap = float(np.max(diff[mask])) if mask.any() else 0.0
    kl = kl_divergence(artifacts.policy.probs, oracle_solution.policy.probs)
    if mdp is not None:
        trained_return: float | None = evaluate_policy_return(mdp, artifacts.policy)
    else:
        last = artifacts.metrics.last
        trained_return = None if last is None else last["gt_return"]  # type: ignore[assignment]
    return_gap = None if trained_return is None else abs(trained_return - oracle_solution.expert_return)
    return GapReport(reward_gap, kl, return_gap, int(mask.sum()))
