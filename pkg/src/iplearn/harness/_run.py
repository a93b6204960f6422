"""Seeded experiment pipeline: environment, data, oracle, training, comparison."""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterator
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .._errors import ConfigurationError, ExperimentError, IplError
from .._json import write_json
from ..approx import save_checkpoint
from ..baselines import BanditProblem, PolicyParameterizedQ, train_dpo, train_iql_with_reward, train_reward_mr
from ..data import (
    PreferenceDataset,
    TransitionDataset,
    build_preference_dataset,
    exhaustive_single_step_pairs,
    make_offline_dataset,
    save_dataset,
)
from ..ipl import TrainArtifacts, train_ipl
from ..mdp import Policy, TabularMdp, evaluate_policy_return, make_gridworld, make_random_mdp, save_mdp, soft_value_iteration
from ..metrics import MetricsLog
from ..oracle import (
    GapReport,
    OracleReport,
    build_design,
    compare_to_oracle,
    oracle_policy,
    solve_rstar,
)
from ._config import EnvironmentSpec, ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    """What one pipeline run produced.

    Attributes
    ----------
    run_dir : Path
        Directory holding every artifact of the run.
    config_hash : str
        Hash of the configuration echo, stamped on every file.
    metrics : MetricsLog
        Evaluation rows (one row for ``dpo`` runs).
    summary : dict
        Scalars written to ``summary.json``.
    """

    run_dir: Path
    config_hash: str
    metrics: MetricsLog
    summary: dict[str, Any]
    artifacts: TrainArtifacts | None = None
    oracle_report: OracleReport | None = None
    gap: GapReport | None = None
    files: list[str] = field(default_factory=list)


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.info("stage %s: start", name)
    try:
        yield
    except ExperimentError:
        raise
    except (IplError, ValueError, FloatingPointError, RuntimeError, IndexError, OSError) as exc:
        logger.error("stage %s failed: %s", name, exc)
        raise ExperimentError(name, exc) from exc
    logger.info("stage %s: done", name)


def run_directory(config: ExperimentConfig, out: str | Path | None = None) -> Path:
    """``<out>/<name>-<config_hash>``."""
    return Path(config.out if out is None else out) / f"{config.name}-{config.config_hash}"


def make_environment(spec: EnvironmentSpec, seed: int) -> TabularMdp:
    """Build the MDP an environment section describes."""
    if spec.kind == "random":
        return make_random_mdp(
            spec.n_states, spec.n_actions, spec.gamma, spec.branching_factor, spec.reward_scale, seed
        )
    if spec.kind == "gridworld":
        goal = spec.goal if spec.goal is not None else (spec.height - 1, spec.width - 1)
        return make_gridworld(
            spec.width, spec.height, goal, spec.step_penalty, spec.slip_prob, spec.gamma, seed
        )
    rng = np.random.default_rng(seed)
    reward = rng.uniform(-spec.reward_scale, spec.reward_scale, size=(spec.n_states, spec.n_actions))
    bandit = BanditProblem(spec.n_states, spec.n_actions, Policy.uniform(spec.n_states, spec.n_actions), (), reward)
    return bandit.as_mdp()


def make_behavior_policy(config: ExperimentConfig, mdp: TabularMdp) -> Policy:
    """Uniform, or soft-optimal for ``r_E`` mixed with ``epsilon`` uniform."""
    spec = config.dataset
    uniform = Policy.uniform(mdp.n_states, mdp.n_actions)
    if spec.behavior == "uniform":
        return uniform
    _, _, soft = soft_value_iteration(mdp, mdp.expert_reward, spec.behavior_alpha, uniform)
    eps = spec.behavior_epsilon
    return Policy((1.0 - eps) * soft.probs + eps * uniform.probs)


def make_datasets(config: ExperimentConfig, mdp: TabularMdp) -> tuple[PreferenceDataset, TransitionDataset]:
    """Generate ``D_p`` and ``D_o`` for *mdp*; a pure function of the config."""
    spec = config.dataset
    seed = config.data_seed
    behavior = make_behavior_policy(config, mdp)
    if config.environment.kind == "bandit":
        bandit = BanditProblem.from_reward(mdp.expert_reward, behavior, spec.mode, seed)
        pref = bandit.to_dataset()
        return pref, pref.segment_transitions()
    if spec.exhaustive:
        pref = PreferenceDataset(tuple(exhaustive_single_step_pairs(mdp, spec.mode, seed)))
        return pref, pref.segment_transitions()
    trajectories, offline = make_offline_dataset(
        mdp, behavior, spec.n_trajectories, spec.horizon, seed, behavior_policy_id=spec.behavior
    )
    pref = build_preference_dataset(
        mdp,
        trajectories,
        spec.n_pairs,
        spec.k,
        spec.mode,
        seed + 1,
        discount_in_segment=spec.discount_in_segment,
        transitions=offline,
        n_rankings=spec.n_rankings,
        ranking_size=spec.ranking_size,
    )
    return pref, offline


def _train(
    config: ExperimentConfig,
    mdp: TabularMdp,
    pref: PreferenceDataset,
    offline: TransitionDataset,
    oracle_rstar: np.ndarray | None,
) -> tuple[TrainArtifacts | None, MetricsLog, Any]:
    algorithm = config.algorithm
    if config.method == "dpo":
        bandit = BanditProblem(mdp.n_states, mdp.n_actions, make_behavior_policy(config, mdp), pref.pairs)
        policy = train_dpo(bandit, algorithm)
        metrics = MetricsLog()
        metrics.append(algorithm.total_steps, gt_return=evaluate_policy_return(mdp, policy))
        return None, metrics, PolicyParameterizedQ(bandit.mu, algorithm.alpha, np.log(policy.probs))
    if config.method == "mr-iql":
        reward_model = train_reward_mr(
            pref, algorithm, n_states=mdp.n_states, n_actions=mdp.n_actions, offline_dataset=offline
        )
        artifacts = train_iql_with_reward(reward_model, offline, algorithm, mdp)
        return artifacts, artifacts.metrics, None
    artifacts = train_ipl(algorithm, pref, offline, mdp, oracle_rstar=oracle_rstar)
    return artifacts, artifacts.metrics, None


class Pipeline:
    """Stages of one run, executed in order and sharing their outputs.

    Each stage method writes its files under ``run_dir`` stamped with the
    config hash and raises :class:`ExperimentError` tagged with its name.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        out: str | Path | None = None,
        *,
        on_stage: Callable[[str], None] | None = None,
    ) -> None:
        self.config = config
        self.config_hash = config.config_hash
        self.run_dir = run_directory(config, out)
        self.on_stage = on_stage
        self.files: list[str] = []
        self.mdp: TabularMdp | None = None
        self.pref: PreferenceDataset | None = None
        self.offline: TransitionDataset | None = None
        self.report: OracleReport | None = None
        self.artifacts: TrainArtifacts | None = None
        self.metrics = MetricsLog()
        self.gap: GapReport | None = None

    def _enter(self, stage: str) -> Any:
        if self.on_stage is not None:
            self.on_stage(stage)
        return _stage(stage)

    def _write(self, name: str, document: dict[str, Any]) -> None:
        write_json(self.run_dir / name, {**document, "config_hash": self.config_hash})
        self.files.append(name)

    def env(self) -> TabularMdp:
        with self._enter("env"):
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self._write("config.json", self.config.to_dict())
            self.mdp = make_environment(self.config.environment, self.config.env_seed)
            save_mdp(self.run_dir / "env.json", self.mdp, config_hash=self.config_hash)
            self.files.append("env.json")
        return self.mdp

    def data(self) -> PreferenceDataset:
        mdp = self.mdp if self.mdp is not None else self.env()
        with self._enter("data"):
            self.pref, self.offline = make_datasets(self.config, mdp)
            n_records = save_dataset(self.run_dir / "dataset.jsonl", self.pref, config_hash=self.config_hash)
            self.files.append("dataset.jsonl")
            logger.info(
                "dataset: %d pairs, %d rankings, %d records",
                len(self.pref.pairs),
                len(self.pref.rankings),
                n_records,
            )
        return self.pref

    def oracle(self) -> OracleReport:
        pref = self.pref if self.pref is not None else self.data()
        assert self.mdp is not None
        with self._enter("oracle"):
            if not pref.pairs:
                raise ConfigurationError("the oracle needs preference pairs")
            algorithm = self.config.algorithm
            design = build_design(
                pref, self.mdp.n_states, self.mdp.n_actions, algorithm.discount_in_segment, gamma=self.mdp.discount
            )
            self.report = solve_rstar(design, algorithm.lam)
            self._write("oracle.json", self.report.to_dict())
            logger.info(
                "oracle: %d Newton iterations, residual %.3e", self.report.iterations, self.report.residual
            )
        return self.report

    def train(self) -> MetricsLog:
        if self.pref is None:
            self.data()
        assert self.mdp is not None and self.pref is not None and self.offline is not None
        with self._enter("train"):
            rstar = None if self.report is None else self.report.table
            self.artifacts, self.metrics, extra_fn = _train(self.config, self.mdp, self.pref, self.offline, rstar)
            self.metrics.to_csv(
                self.run_dir / "metrics.csv",
                header_comment=(
                    f"config_hash: {self.config_hash}; method: {self.config.method}; "
                    f"seed: {self.config.seed}"
                ),
            )
            self.files.append("metrics.csv")
            learned = [] if self.artifacts is None else self.artifacts.learnables()
            if extra_fn is not None:
                learned.append(extra_fn)
            for fn in learned:
                save_checkpoint(self.run_dir / f"{fn.role}.json", fn, config_hash=self.config_hash)
                self.files.append(f"{fn.role}.json")
        return self.metrics

    def compare(self) -> GapReport:
        if self.report is None or self.artifacts is None or self.mdp is None:
            raise ExperimentError("compare", ConfigurationError("compare needs the oracle and a trained run"))
        algorithm = self.config.algorithm
        with self._enter("compare"):
            solution = oracle_policy(
                self.mdp,
                self.report.table,
                algorithm.alpha,
                self.artifacts.behavior_policy,
                variant=self.config.variant,  # type: ignore[arg-type]
                tau=algorithm.tau,
                beta=algorithm.beta,
                weight_max=algorithm.weight_max,
            )
            self.gap = compare_to_oracle(self.artifacts, self.report, solution, self.mdp)
            self._write("gap.json", self.gap.to_dict())
            logger.info("oracle gap: reward %.3e, max KL %.3e", self.gap.reward_gap, self.gap.max_kl)
        return self.gap

    def summary(self) -> dict[str, Any]:
        returns = self.metrics.column("gt_return")
        finite = returns[np.isfinite(returns)]
        artifacts, gap = self.artifacts, self.gap
        summary = {
            "name": self.config.name,
            "method": self.config.method,
            "seed": self.config.seed,
            "environment": self.config.environment.kind,
            "n_pairs": 0 if self.pref is None else len(self.pref.pairs),
            "best_return": float(finite.max()) if finite.size else None,
            "final_return": float(finite[-1]) if finite.size else None,
            "param_count": None if artifacts is None else artifacts.param_count(),
            "steps": self.config.algorithm.total_steps if artifacts is None else artifacts.steps,
            "reward_gap": None if gap is None else gap.reward_gap,
            "max_kl": None if gap is None else gap.max_kl,
        }
        self._write("summary.json", summary)
        return {**summary, "config_hash": self.config_hash}

    def result(self, summary: dict[str, Any]) -> RunResult:
        return RunResult(
            self.run_dir, self.config_hash, self.metrics, summary, self.artifacts, self.report, self.gap, self.files
        )


def run_experiment(
    config: ExperimentConfig,
    out: str | Path | None = None,
    *,
    on_stage: Callable[[str], None] | None = None,
) -> RunResult:
    """Run the whole pipeline and write its artifacts under :func:`run_directory`.

    Files written: ``config.json``, ``env.json``, ``dataset.jsonl``,
    ``metrics.csv``, ``summary.json``, one ``<role>.json`` checkpoint per
    learned function and, with the oracle enabled, ``oracle.json`` and
    ``gap.json``.  Every file carries the config hash.  Reruns of the same
    config produce a byte-identical ``metrics.csv``.

    Raises
    ------
    ExperimentError
        Tagged with the failing stage; its ``exit_code`` follows the cause
        (2 configuration, 3 divergence, 4 oracle).
    """
    pipeline = Pipeline(config, out, on_stage=on_stage)
    pipeline.env()
    pipeline.data()
    if config.oracle:
        pipeline.oracle()
    pipeline.train()
    if config.oracle and pipeline.artifacts is not None:
        pipeline.compare()
    return pipeline.result(pipeline.summary())


def _run_one(args: tuple[ExperimentConfig, str | None]) -> tuple[str, int, str]:
    config, out = args
    try:
        result = run_experiment(config, out)
    except ExperimentError as exc:
        return str(run_directory(config, out)), exc.exit_code, str(exc)
    return str(result.run_dir), 0, ""


def sweep(
    config: ExperimentConfig,
    out: str | Path | None = None,
    *,
    max_workers: int = 1,
) -> list[tuple[str, int, str]]:
    """Run every configuration of :meth:`ExperimentConfig.expand_sweep`.

    Runs are independent and write to their own directories; with
    ``max_workers > 1`` they go to a process pool.  A failing run does not
    stop the others.

    Returns
    -------
    list[tuple[str, int, str]]
        ``(run_dir, exit_code, message)`` per run, in sweep order.
    """
    jobs = [(cfg, None if out is None else str(out)) for cfg in config.expand_sweep()]
    logger.info("sweep: %d runs, %d workers", len(jobs), max_workers)
    if max_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    for run_dir, code, message in results:
        if code:
            logger.warning("run %s failed with exit code %d: %s", run_dir, code, message)
    return results
