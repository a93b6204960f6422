"""Learnable functions and their optimizers.

Two representations share one interface: :class:`TabularFn` (a dense table)
and :class:`MlpFn` (tanh hidden layers with a linear output and hand-written
reverse-mode gradients).  Parameters of either live in a flat
:class:`ParamBlock` so optimizers and checkpoints do not care which is which.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from typing_extensions import override

from ._errors import ConfigurationError, EvaluationError, OptimizerError
from ._registry import resolve_codec

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

ROLES: tuple[str, ...] = ("q", "v", "policy", "reward")
Role = Literal["q", "v", "policy", "reward"]


@dataclass
class ParamBlock:
    """Flat parameter vector with the shapes it is viewed as.

    Attributes
    ----------
    values : np.ndarray
        1-D float64 vector, updated in place by optimizers.
    shapes : tuple[tuple[int, ...], ...]
        Shapes of consecutive slices of ``values``.
    role : str
        One of ``q``, ``v``, ``policy``, ``reward``.
    """

    values: FloatArray
    shapes: tuple[tuple[int, ...], ...]
    role: str

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        self.shapes = tuple(tuple(int(d) for d in shape) for shape in self.shapes)
        expected = sum(math.prod(shape) for shape in self.shapes)
        if expected != self.values.shape[0]:
            raise ConfigurationError(
                f"shape metadata describes {expected} parameters, vector has "
                f"{self.values.shape[0]}"
            )
        if self.role not in ROLES:
            raise ConfigurationError(f"Unsupported role {self.role!r} (expected one of {ROLES})")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("parameters must be finite")

    def __len__(self) -> int:
        return self.values.shape[0]

    def views(self) -> list[FloatArray]:
        """Writable views of ``values``, one per shape."""
        out = []
        offset = 0
        for shape in self.shapes:
            size = math.prod(shape)
            out.append(self.values[offset : offset + size].reshape(shape))
            offset += size
        return out

    def copy(self) -> ParamBlock:
        return ParamBlock(self.values.copy(), self.shapes, self.role)


class FunctionApprox(ABC):
    """A learnable function of ``state`` or ``(state, action)``.

    ``forward(states)`` on a state-action function returns one row of
    ``n_actions`` outputs per state; passing ``actions`` selects one output
    per row.  State functions (``v``) return one scalar per state.
    """

    params: ParamBlock
    n_states: int
    n_actions: int | None

    @property
    def role(self) -> str:
        return self.params.role

    @property
    def takes_actions(self) -> bool:
        """Whether the function is indexed by ``(state, action)``."""
        return self.n_actions is not None

    def param_count(self) -> int:
        return len(self.params)

    @abstractmethod
    def forward(self, states: npt.ArrayLike, actions: npt.ArrayLike | None = None) -> FloatArray:
        """Evaluate on a batch.

        Raises
        ------
        EvaluationError
            If a state or action id is out of range.
        """

    @abstractmethod
    def backward(
        self,
        states: npt.ArrayLike,
        actions: npt.ArrayLike | None,
        upstream: npt.ArrayLike,
    ) -> FloatArray:
        """Gradient of ``sum(upstream * forward(states, actions))`` w.r.t. the parameters."""

    @abstractmethod
    def clone(self) -> FunctionApprox:
        """Independent copy with the same parameters."""

    def _check_ids(self, states: np.ndarray, actions: np.ndarray | None) -> None:
        if states.size and (states.min() < 0 or states.max() >= self.n_states):
            raise EvaluationError(f"state id outside [0, {self.n_states})")
        if actions is not None:
            if self.n_actions is None:
                raise EvaluationError(f"{self.role} function takes no actions")
            if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
                raise EvaluationError(f"action id outside [0, {self.n_actions})")


class TabularFn(FunctionApprox):
    """Dense ``[state][action]`` (or ``[state]``) table.

    Parameters
    ----------
    n_states : int
        Number of states.
    n_actions : int | None
        Number of actions, or ``None`` for a state-value table.
    role : str
        Parameter role tag.
    init : np.ndarray | None
        Initial table; zeros when omitted.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int | None,
        role: Role,
        init: npt.ArrayLike | None = None,
    ) -> None:
        self.n_states = n_states
        self.n_actions = n_actions
        shape = (n_states,) if n_actions is None else (n_states, n_actions)
        values = np.zeros(shape) if init is None else np.asarray(init, dtype=np.float64)
        if values.shape != shape:
            raise ConfigurationError(f"initial table must have shape {shape}, got {values.shape}")
        self.params = ParamBlock(values.ravel(), (shape,), role)

    @property
    def table(self) -> FloatArray:
        """Writable view of the parameters in table shape."""
        return self.params.views()[0]

    @override
    def forward(self, states: npt.ArrayLike, actions: npt.ArrayLike | None = None) -> FloatArray:
        states = np.asarray(states, dtype=np.int64)
        actions = None if actions is None else np.asarray(actions, dtype=np.int64)
        self._check_ids(states, actions)
        table = self.table
        if actions is None:
            return table[states].copy()
        return table[states, actions]

    @override
    def backward(
        self,
        states: npt.ArrayLike,
        actions: npt.ArrayLike | None,
        upstream: npt.ArrayLike,
    ) -> FloatArray:
        states = np.asarray(states, dtype=np.int64)
        actions = None if actions is None else np.asarray(actions, dtype=np.int64)
        self._check_ids(states, actions)
        grad = np.zeros(self.params.shapes[0])
        index = states if actions is None else (states, actions)
        np.add.at(grad, index, np.asarray(upstream, dtype=np.float64))
        return grad.ravel()

    @override
    def clone(self) -> TabularFn:
        return TabularFn(self.n_states, self.n_actions, self.role, self.table)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Featurizer:
    """Maps state ids (and optionally action ids) to input vectors.

    With ``features=None`` states are one-hot encoded; otherwise row ``s`` of
    ``features`` is used.  When ``n_actions`` is set and the function consumes
    actions, a one-hot action block is appended.
    """

    n_states: int
    n_actions: int | None = None
    features: FloatArray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.features is not None:
            feats = np.array(self.features, dtype=np.float64, copy=True)
            if feats.ndim != 2 or feats.shape[0] != self.n_states:
                raise ConfigurationError(
                    f"feature table must have shape ({self.n_states}, d), got {feats.shape}"
                )
            feats.setflags(write=False)
            object.__setattr__(self, "features", feats)

    @property
    def state_dim(self) -> int:
        return self.n_states if self.features is None else self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.state_dim + (self.n_actions or 0)

    def __call__(self, states: np.ndarray, actions: np.ndarray | None = None) -> FloatArray:
        if self.features is None:
            x = np.eye(self.n_states)[states]
        else:
            x = self.features[states]
        if self.n_actions is not None:
            if actions is None:
                raise EvaluationError("featurizer needs actions for a state-action input")
            x = np.concatenate([x, np.eye(self.n_actions)[actions]], axis=1)
        return x

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "features": None if self.features is None else self.features,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Featurizer:
        features = data.get("features")
        return cls(
            int(data["n_states"]),
            None if data.get("n_actions") is None else int(data["n_actions"]),
            None if features is None else np.asarray(features, dtype=np.float64),
        )


class MlpFn(FunctionApprox):
    """Multi-layer perceptron with tanh hidden units and a linear output.

    Parameter layout is ``W_0, b_0, W_1, b_1, ...`` with ``W_l`` of shape
    ``(fan_in, fan_out)``, so the count is ``sum((fan_in + 1) * fan_out)``.

    Parameters
    ----------
    n_states, n_actions : int, int | None
        Input domain.
    role : str
        ``q`` and ``reward`` take ``(state, action)`` and output one scalar;
        ``v`` takes a state and outputs one scalar; ``policy`` takes a state
        and outputs ``n_actions`` logits.
    hidden_sizes : Sequence[int]
        Widths of the tanh layers; empty for a linear model.
    features : np.ndarray | None
        Optional ``(n_states, d)`` state features replacing the one-hot code.
    init : ``"glorot"`` | ``"zeros"``
        Glorot-uniform weights with zero biases, or all zeros.
    seed : int
        Seed of the Glorot initializer.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int | None,
        role: Role,
        hidden_sizes: Sequence[int] = (64, 64),
        *,
        features: npt.ArrayLike | None = None,
        init: Literal["glorot", "zeros"] = "glorot",
        seed: int = 0,
    ) -> None:
        if role in ("q", "reward", "policy") and n_actions is None:
            raise ConfigurationError(f"{role} function needs n_actions")
        self.n_states = n_states
        self.n_actions = None if role == "v" else n_actions
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigurationError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        consumes_actions = role in ("q", "reward")
        self.featurizer = Featurizer(
            n_states,
            n_actions if consumes_actions else None,
            None if features is None else np.asarray(features, dtype=np.float64),
        )
        self.output_dim = n_actions if role == "policy" else 1
        sizes = (self.featurizer.dim, *self.hidden_sizes, self.output_dim)
        shapes: list[tuple[int, ...]] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            shapes.extend([(fan_in, fan_out), (fan_out,)])
        self.params = ParamBlock(np.zeros(sum(math.prod(s) for s in shapes)), tuple(shapes), role)
        if init == "glorot":
            rng = np.random.default_rng(seed)
            for weight in self.params.views()[0::2]:
                fan_in, fan_out = weight.shape
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                weight[...] = rng.uniform(-limit, limit, size=weight.shape)
        elif init != "zeros":
            raise ConfigurationError(f"Unsupported init {init!r} (expected 'glorot' or 'zeros')")

    @property
    def consumes_actions(self) -> bool:
        return self.role in ("q", "reward")

    def _layers(self) -> list[tuple[FloatArray, FloatArray]]:
        views = self.params.views()
        return list(zip(views[0::2], views[1::2]))

    def forward_features(self, x: npt.ArrayLike) -> FloatArray:
        """Evaluate on raw input rows of shape ``(B, d)``."""
        out, _ = self._forward(np.asarray(x, dtype=np.float64))
        return out

    def backward_features(self, x: npt.ArrayLike, upstream: npt.ArrayLike) -> FloatArray:
        """Parameter gradient for raw input rows."""
        x = np.asarray(x, dtype=np.float64)
        _, activations = self._forward(x)
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim == 1:
            g = g[:, None]
        layers = self._layers()
        grads: list[FloatArray] = []
        for depth in range(len(layers) - 1, -1, -1):
            weight, _ = layers[depth]
            h_in = activations[depth]
            grads.append(g.sum(axis=0))
            grads.append(h_in.T @ g)
            if depth:
                g = (g @ weight.T) * (1.0 - h_in**2)
        return np.concatenate([block.ravel() for block in reversed(grads)])

    def _forward(self, x: FloatArray) -> tuple[FloatArray, list[FloatArray]]:
        layers = self._layers()
        activations = [x]
        h = x
        for weight, bias in layers[:-1]:
            h = np.tanh(h @ weight + bias)
            activations.append(h)
        weight, bias = layers[-1]
        out = h @ weight + bias
        if self.output_dim == 1:
            out = out[:, 0]
        return out, activations

    def _inputs(self, states: npt.ArrayLike, actions: npt.ArrayLike | None) -> tuple[FloatArray, np.ndarray | None]:
        states = np.asarray(states, dtype=np.int64)
        actions = None if actions is None else np.asarray(actions, dtype=np.int64)
        self._check_ids(states, actions)
        if self.consumes_actions:
            if actions is None:
                raise EvaluationError(f"{self.role} MLP needs actions")
            return self.featurizer(states, actions), None
        return self.featurizer(states), actions

    @override
    def forward(self, states: npt.ArrayLike, actions: npt.ArrayLike | None = None) -> FloatArray:
        if self.consumes_actions and actions is None:
            return self.rows(states)
        x, picked = self._inputs(states, actions)
        out = self.forward_features(x)
        if picked is not None:
            return out[np.arange(out.shape[0]), picked]
        return out

    @override
    def backward(
        self,
        states: npt.ArrayLike,
        actions: npt.ArrayLike | None,
        upstream: npt.ArrayLike,
    ) -> FloatArray:
        x, picked = self._inputs(states, actions)
        upstream = np.asarray(upstream, dtype=np.float64)
        if picked is not None:
            full = np.zeros((x.shape[0], self.output_dim))
            full[np.arange(x.shape[0]), picked] = upstream
            upstream = full
        return self.backward_features(x, upstream)

    def rows(self, states: npt.ArrayLike) -> FloatArray:
        """``[batch][action]`` outputs of a state-action function."""
        states = np.asarray(states, dtype=np.int64)
        assert self.n_actions is not None
        cols = [
            self.forward(states, np.full(states.shape, a, dtype=np.int64))
            for a in range(self.n_actions)
        ]
        return np.stack(cols, axis=1) if cols else np.empty((states.shape[0], 0))

    @override
    def clone(self) -> MlpFn:
        twin = MlpFn.__new__(MlpFn)
        twin.n_states = self.n_states
        twin.n_actions = self.n_actions
        twin.hidden_sizes = self.hidden_sizes
        twin.featurizer = self.featurizer
        twin.output_dim = self.output_dim
        twin.params = self.params.copy()
        return twin


def table_of(fn: FunctionApprox) -> FloatArray:
    """Dense table of *fn* over every state (and action)."""
    states = np.arange(fn.n_states)
    return fn.forward(states)


def param_count(*parts: FunctionApprox | Iterable[FunctionApprox] | Any) -> int:
    """Number of learnable scalars across functions or objects exposing ``learnables()``."""
    total = 0
    for part in parts:
        if isinstance(part, FunctionApprox):
            total += part.param_count()
        elif hasattr(part, "learnables"):
            total += param_count(*part.learnables())
        else:
            total += param_count(*part)
    return total


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class OptimizerState(ABC):
    """Mutable optimizer state bound to one parameter vector."""

    step: int

    @abstractmethod
    def apply(self, params: FloatArray, grad: FloatArray) -> FloatArray:
        """Update *params* in place with *grad* and return them."""


def _check_grad(params: np.ndarray, grad: np.ndarray, expected: int | None = None) -> None:
    if params.shape != grad.shape or (expected is not None and grad.shape[0] != expected):
        raise ConfigurationError(
            f"gradient shape {grad.shape} does not match parameters {params.shape}"
        )
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        raise OptimizerError(f"non-finite gradient ({bad} of {grad.shape[0]} entries)")


@dataclass
class AdamState(OptimizerState):
    """First/second moments and step counter of Adam."""

    m: FloatArray
    v: FloatArray
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def zeros(cls, n_params: int, lr: float = 3e-4, **kwargs: float) -> AdamState:
        return cls(np.zeros(n_params), np.zeros(n_params), lr, **kwargs)

    @override
    def apply(self, params: FloatArray, grad: FloatArray) -> FloatArray:
        return adam_step(self, params, grad)


@dataclass
class SgdState(OptimizerState):
    """Plain gradient descent with a fixed step size."""

    lr: float
    step: int = 0

    @override
    def apply(self, params: FloatArray, grad: FloatArray) -> FloatArray:
        grad = np.asarray(grad, dtype=np.float64)
        _check_grad(params, grad)
        self.step += 1
        params -= self.lr * grad
        return params


def adam_step(state: AdamState, params: FloatArray, grad: FloatArray) -> FloatArray:
    """One bias-corrected Adam update of *params* (in place).

    Raises
    ------
    OptimizerError
        If *grad* contains NaN or infinity.
    """
    grad = np.asarray(grad, dtype=np.float64)
    _check_grad(params, grad, state.m.shape[0])
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grad**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def make_optimizer(kind: str, n_params: int, lr: float) -> OptimizerState:
    """Build a fresh ``adam`` or ``sgd`` state."""
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr!r}")
    if kind == "adam":
        return AdamState.zeros(n_params, lr)
    if kind == "sgd":
        return SgdState(lr)
    raise ConfigurationError(f"Unsupported optimizer {kind!r} (expected 'adam' or 'sgd')")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_to_dict(fn: FunctionApprox) -> dict[str, Any]:
    """Shape metadata plus the flat parameter vector."""
    doc: dict[str, Any] = {
        "role": fn.role,
        "n_states": fn.n_states,
        "n_actions": fn.n_actions,
        "shapes": [list(shape) for shape in fn.params.shapes],
        "params": fn.params.values.copy(),
    }
    if isinstance(fn, MlpFn):
        doc["kind"] = "mlp"
        doc["hidden_sizes"] = list(fn.hidden_sizes)
        doc["features"] = fn.featurizer.features
    else:
        doc["kind"] = "tabular"
    return doc


def dict_to_checkpoint(doc: dict[str, Any]) -> FunctionApprox:
    """Inverse of :func:`checkpoint_to_dict`."""
    role = doc["role"]
    n_actions = doc.get("n_actions")
    n_actions = None if n_actions is None else int(n_actions)
    params = np.asarray(doc["params"], dtype=np.float64)
    shapes = tuple(tuple(shape) for shape in doc["shapes"])
    if doc["kind"] == "tabular":
        fn: FunctionApprox = TabularFn(int(doc["n_states"]), n_actions, role)
    elif doc["kind"] == "mlp":
        features = doc.get("features")
        fn = MlpFn(
            int(doc["n_states"]),
            n_actions,
            role,
            doc["hidden_sizes"],
            features=None if features is None else np.asarray(features, dtype=np.float64),
            init="zeros",
        )
    else:
        raise ConfigurationError(f"Unsupported checkpoint kind {doc['kind']!r}")
    if fn.params.shapes != shapes:
        raise ConfigurationError(
            f"checkpoint shapes {shapes} do not match the rebuilt function {fn.params.shapes}"
        )
    fn.params = ParamBlock(params, shapes, role)
    return fn


def save_checkpoint(path: str | Path, fn: FunctionApprox, **extra: Any) -> None:
    """Write *fn* with the document codec registered for *path*; *extra* keys are stored alongside."""
    resolve_codec(path, kind="document").dump(path, {**checkpoint_to_dict(fn), **extra})


def load_checkpoint(path: str | Path) -> FunctionApprox:
    """Read a function written by :func:`save_checkpoint`."""
    return dict_to_checkpoint(resolve_codec(path, kind="document").load(path))
