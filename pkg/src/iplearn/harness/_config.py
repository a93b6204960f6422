"""Experiment configuration: one JSON file describing environment, data and algorithm."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

from .._errors import ConfigurationError
from .._json import jsonable, read_json
from ..data import LABEL_MODES
from ..ipl import IplConfig

METHODS: tuple[str, ...] = ("ipl-xql", "ipl-iql", "ipl-awac", "mr-iql", "dpo")
ENVIRONMENTS: tuple[str, ...] = ("random", "gridworld", "bandit")
BEHAVIORS: tuple[str, ...] = ("uniform", "soft-optimal")
_DERIVED: tuple[str, ...] = ("variant", "gamma", "k", "discount_in_segment")


def _from_mapping(cls: type, data: dict[str, Any], section: str) -> Any:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys in [{section}]: {unknown}")
    return cls(**data)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Which MDP to generate.

    ``random`` uses ``n_states``, ``n_actions`` and ``branching_factor``;
    ``gridworld`` uses ``width``, ``height``, ``goal``, ``step_penalty`` and
    ``slip_prob``; ``bandit`` is a one-step problem with ``n_states``
    contexts and ``gamma = 0``.
    """

    kind: Literal["random", "gridworld", "bandit"] = "random"
    n_states: int = 5
    n_actions: int = 3
    gamma: float = 0.9
    branching_factor: int = 2
    reward_scale: float = 1.0
    width: int = 5
    height: int = 5
    goal: tuple[int, int] | None = None
    step_penalty: float = 0.0
    slip_prob: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ENVIRONMENTS:
            raise ConfigurationError(f"Unsupported environment {self.kind!r} (expected one of {ENVIRONMENTS})")
        if self.goal is not None:
            object.__setattr__(self, "goal", tuple(int(g) for g in self.goal))
        if self.kind == "bandit" and self.gamma != 0.0:
            object.__setattr__(self, "gamma", 0.0)


@dataclass(frozen=True)
class DatasetSpec:
    """How ``D_o`` and ``D_p`` are generated.

    With ``exhaustive`` the preference set is every pair of distinct
    single-step ``(s, a)`` cells (``k`` is forced to 1).
    """

    behavior: Literal["uniform", "soft-optimal"] = "uniform"
    behavior_alpha: float = 1.0
    behavior_epsilon: float = 0.0
    n_trajectories: int = 20
    horizon: int = 50
    n_pairs: int = 100
    k: int = 25
    mode: Literal["bernoulli", "argmax", "soft"] = "argmax"
    exhaustive: bool = False
    n_rankings: int = 0
    ranking_size: int = 3
    discount_in_segment: bool = False
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.behavior not in BEHAVIORS:
            raise ConfigurationError(f"Unsupported behavior {self.behavior!r} (expected one of {BEHAVIORS})")
        if self.mode not in LABEL_MODES:
            raise ConfigurationError(f"Unsupported label mode {self.mode!r} (expected one of {LABEL_MODES})")
        if not 0.0 <= self.behavior_epsilon <= 1.0:
            raise ConfigurationError(f"behavior_epsilon must lie in [0, 1], got {self.behavior_epsilon!r}")
        if self.ranking_size < 2:
            raise ConfigurationError(f"ranking_size must be >= 2, got {self.ranking_size!r}")
        if self.exhaustive and self.k != 1:
            object.__setattr__(self, "k", 1)


@dataclass(frozen=True)
class ExperimentConfig:
    """A complete, seeded pipeline description.

    Attributes
    ----------
    method : str
        One of ``ipl-xql``, ``ipl-iql``, ``ipl-awac``, ``mr-iql``, ``dpo``.
    algorithm : IplConfig
        Hyperparameters; ``gamma``, ``k``, ``discount_in_segment`` and
        ``seed`` are kept consistent with the other sections.
    sweep : dict[str, list]
        ``IplConfig`` field name to the values to sweep over.
    """

    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    method: str = "ipl-xql"
    algorithm: IplConfig = field(default_factory=IplConfig)
    oracle: bool = False
    sweep: dict[str, list[Any]] = field(default_factory=dict)
    out: str = "runs"
    name: str = "experiment"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"Unsupported method {self.method!r} (expected one of {METHODS})")
        variant = "xql" if self.method == "dpo" else self.method.split("-", 1)[1]
        env, data = self.environment, self.dataset
        k = 1 if env.kind == "bandit" else data.k
        s = self.algorithm.s
        if s is not None and s > k:
            raise ConfigurationError(f"s={s} exceeds the segment length k={k}")
        algorithm = self.algorithm.replace(
            variant=variant,
            gamma=env.gamma,
            k=k,
            discount_in_segment=data.discount_in_segment,
            seed=self.seed,
        )
        object.__setattr__(self, "algorithm", algorithm)
        object.__setattr__(self, "sweep", {str(key): list(values) for key, values in self.sweep.items()})
        if self.method == "dpo" and env.kind != "bandit":
            raise ConfigurationError("dpo runs need the bandit environment")
        if self.oracle:
            if self.method == "dpo":
                raise ConfigurationError("the oracle comparison applies to IPL and MR runs, not dpo")
            if algorithm.representation != "tabular" or not algorithm.regularize_full_space:
                raise ConfigurationError(
                    "the oracle comparison needs a tabular run with regularize_full_space"
                )
            if variant == "awac":
                raise ConfigurationError("the oracle comparison supports the xql and iql variants only")
            if algorithm.lam <= 0:
                raise ConfigurationError("the oracle comparison needs lambda > 0")
        sweepable = ({f.name for f in dataclasses.fields(IplConfig)} - set(_DERIVED)) | {"lambda", "seed"}
        for key in self.sweep:
            if key not in sweepable:
                raise ConfigurationError(f"cannot sweep {key!r} (expected an IplConfig field or seed)")

    @property
    def env_seed(self) -> int:
        return self.seed if self.environment.seed is None else self.environment.seed

    @property
    def data_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    @property
    def variant(self) -> str:
        return self.algorithm.variant

    def to_dict(self) -> dict[str, Any]:
        """Canonical echo; round-trips through :meth:`from_dict`."""
        algorithm = self.algorithm.to_dict()
        for key in (*_DERIVED, "seed"):
            algorithm.pop(key)
        return jsonable(
            {
                "name": self.name,
                "seed": self.seed,
                "out": self.out,
                "method": self.method,
                "oracle": self.oracle,
                "environment": dataclasses.asdict(self.environment),
                "dataset": dataclasses.asdict(self.dataset),
                "algorithm": algorithm,
                "sweep": self.sweep,
            }
        )

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        """Build from a parsed JSON document.

        A top-level ``eval_interval`` overrides the algorithm section's.

        Raises
        ------
        ConfigurationError
            For unknown keys or invalid values in any section.
        """
        data = dict(data)
        known = {"name", "seed", "out", "method", "oracle", "environment", "dataset", "algorithm", "sweep", "eval_interval"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown top-level config keys {unknown}")
        algorithm = dict(data.get("algorithm") or {})
        for key in (*_DERIVED, "seed"):
            if key in algorithm:
                raise ConfigurationError(
                    f"algorithm.{key} is derived from the other sections and cannot be set"
                )
        if "eval_interval" in data:
            algorithm["eval_interval"] = data["eval_interval"]
        environment = _from_mapping(EnvironmentSpec, data.get("environment") or {}, "environment")
        dataset = _from_mapping(DatasetSpec, data.get("dataset") or {}, "dataset")
        algorithm["k"] = 1 if environment.kind == "bandit" else dataset.k
        algorithm["gamma"] = environment.gamma
        return cls(
            environment=environment,
            dataset=dataset,
            method=data.get("method", "ipl-xql"),
            algorithm=IplConfig.from_dict(algorithm),
            oracle=bool(data.get("oracle", False)),
            sweep=data.get("sweep") or {},
            out=str(data.get("out", "runs")),
            name=str(data.get("name", "experiment")),
            seed=int(data.get("seed", 0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> ExperimentConfig:
        try:
            data = read_json(path)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        except OSError as exc:
            raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes: Any) -> ExperimentConfig:
        """Copy with top-level changes; ``algorithm`` may be a mapping of field overrides."""
        algorithm = changes.pop("algorithm", None)
        if isinstance(algorithm, dict):
            changes["algorithm"] = self.algorithm.replace(**algorithm)
        elif algorithm is not None:
            changes["algorithm"] = algorithm
        return dataclasses.replace(self, **changes)

    def expand_sweep(self) -> list[ExperimentConfig]:
        """Cartesian product of the sweep values; the config itself when there is none."""
        if not self.sweep:
            return [self]
        keys = sorted(self.sweep)
        configs = [self.replace(sweep={})]
        for key in keys:
            configs = [
                cfg.replace(seed=int(value)) if key == "seed" else cfg.replace(algorithm={key: value})
                for cfg in configs
                for value in self.sweep[key]
            ]
        return configs

    @property
    def config_hash(self) -> str:
        """First 12 hex digits of SHA-256 over the sorted-key JSON echo (output directory excluded)."""
        echo = self.to_dict()
        echo.pop("out")
        canonical = json.dumps(echo, sort_keys=True, separators=(",", ":"), allow_nan=False)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]
