"""Experiment orchestration: configs, seeded pipelines, sweeps and run summaries."""

from ._config import METHODS, DatasetSpec, EnvironmentSpec, ExperimentConfig
from ._run import (
    Pipeline,
    RunResult,
    make_behavior_policy,
    make_datasets,
    make_environment,
    run_directory,
    run_experiment,
    sweep,
)

__all__ = [
    "METHODS",
    "EnvironmentSpec",
    "DatasetSpec",
    "ExperimentConfig",
    "Pipeline",
    "RunResult",
    "make_environment",
    "make_behavior_policy",
    "make_datasets",
    "run_directory",
    "run_experiment",
    "sweep",
]

try:
    from ._compare import compare_runs, load_summaries
except ImportError:
    pass
else:
    __all__ += ["compare_runs", "load_summaries"]
