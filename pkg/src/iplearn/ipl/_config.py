"""Hyperparameters shared by the IPL trainers and the explicit-reward baseline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Literal

from .._errors import ConfigurationError

VARIANTS: tuple[str, ...] = ("xql", "iql", "awac")


@dataclass(frozen=True)
class IplConfig:
    """All knobs of one training run.

    Defaults follow the usual offline-RL settings (Adam at 3e-4, expectile
    0.7, AWR temperature 3, regularization weight 0.5).  ``lam`` is the
    regularization weight (``"lambda"`` in JSON files).  Batch sizes of
    ``None`` mean full-batch; ``s=None`` disables subsampling.
    ``expectation="auto"`` picks exact next-state expectations for tabular
    runs with a known MDP and sampled ones otherwise.
    """

    lam: float = 0.5
    alpha: float = 1.0
    beta: float = 3.0
    tau: float = 0.7
    gamma: float = 0.99
    k: int = 25
    s: int | None = None
    pref_batch_size: int | None = 64
    offline_batch_size: int | None = 256
    q_lr: float = 3e-4
    v_lr: float = 3e-4
    policy_lr: float = 3e-4
    reward_lr: float = 3e-4
    optimizer: Literal["adam", "sgd"] = "adam"
    total_steps: int = 10_000
    reward_steps: int = 20_000
    eval_interval: int = 500
    target_update_rate: float = 0.005
    variant: Literal["xql", "iql", "awac"] = "xql"
    representation: Literal["tabular", "mlp"] = "tabular"
    expectation: Literal["auto", "exact", "sampled"] = "auto"
    hidden_sizes: tuple[int, ...] = (64, 64)
    loss: Literal["pairwise", "ranking"] = "pairwise"
    regularize_full_space: bool = False
    discount_in_segment: bool = False
    divergence_bound: float = 1e4
    z_max: float = 10.0
    weight_max: float = 100.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        checks: list[tuple[bool, str]] = [
            (self.lam >= 0, f"lambda must be >= 0, got {self.lam!r}"),
            (self.alpha > 0, f"alpha must be > 0, got {self.alpha!r}"),
            (self.beta > 0, f"beta must be > 0, got {self.beta!r}"),
            (0 < self.tau < 1, f"tau must lie in (0, 1), got {self.tau!r}"),
            (0 <= self.gamma < 1, f"gamma must lie in [0, 1), got {self.gamma!r}"),
            (self.k >= 1, f"k must be >= 1, got {self.k!r}"),
            (self.s is None or 1 <= self.s <= self.k, f"s must lie in [1, k={self.k}], got {self.s!r}"),
            (self.total_steps >= 1, f"total_steps must be >= 1, got {self.total_steps!r}"),
            (self.reward_steps >= 0, f"reward_steps must be >= 0, got {self.reward_steps!r}"),
            (self.eval_interval >= 1, f"eval_interval must be >= 1, got {self.eval_interval!r}"),
            (0 < self.target_update_rate <= 1, f"target_update_rate must lie in (0, 1], got {self.target_update_rate!r}"),
            (self.variant in VARIANTS, f"Unsupported variant {self.variant!r} (expected one of {VARIANTS})"),
            (self.representation in ("tabular", "mlp"), f"Unsupported representation {self.representation!r}"),
            (self.expectation in ("auto", "exact", "sampled"), f"Unsupported expectation {self.expectation!r}"),
            (self.optimizer in ("adam", "sgd"), f"Unsupported optimizer {self.optimizer!r}"),
            (self.loss in ("pairwise", "ranking"), f"Unsupported loss {self.loss!r}"),
            (self.divergence_bound > 0, f"divergence_bound must be > 0, got {self.divergence_bound!r}"),
            (self.z_max > 0, f"z_max must be > 0, got {self.z_max!r}"),
            (self.weight_max >= 1, f"weight_max must be >= 1, got {self.weight_max!r}"),
        ]
        for size in (self.pref_batch_size, self.offline_batch_size):
            checks.append((size is None or size >= 1, f"batch sizes must be >= 1 or None, got {size!r}"))
        for name in ("q_lr", "v_lr", "policy_lr", "reward_lr"):
            value = getattr(self, name)
            checks.append((value > 0, f"{name} must be > 0, got {value!r}"))
        if self.representation == "mlp":
            checks.append((self.expectation != "exact", "exact expectations need the tabular representation"))
            checks.append((not self.regularize_full_space, "full-space regularization needs the tabular representation"))
        if self.regularize_full_space:
            checks.append((self.expectation != "sampled", "full-space regularization needs exact expectations"))
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)

    @property
    def subsample_length(self) -> int | None:
        """Effective subsample length, ``None`` when segments are used whole."""
        return None if self.s is None or self.s == self.k else self.s

    def replace(self, **changes: Any) -> IplConfig:
        return dataclasses.replace(self, **_rename(changes))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        out["hidden_sizes"] = list(self.hidden_sizes)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> IplConfig:
        """Build from a mapping; unknown keys are a configuration error."""
        data = _rename(dict(data))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown IplConfig fields {unknown}")
        return cls(**data)


def _rename(data: dict[str, Any]) -> dict[str, Any]:
    if "lambda" in data:
        data["lam"] = data.pop("lambda")
    return data
