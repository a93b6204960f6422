"""Segments, scripted preference labels, subsampling and dataset files.

Preferences follow a Bradley-Terry model over segment returns; rankings follow
its Plackett-Luce extension.  Datasets are immutable once built and round-trip
value-exactly through any records codec (``*.jsonl`` or ``*.msgpack``).
"""

from __future__ import annotations

import itertools
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import numpy.typing as npt
from scipy.special import expit, softmax

from ._errors import ConfigurationError, DatasetParseError, EvaluationError
from ._registry import resolve_codec
from .mdp import Policy, TabularMdp, Trajectory, rollout

IntArray = npt.NDArray[np.int64]
LabelMode = Literal["bernoulli", "argmax", "soft"]
LABEL_MODES: tuple[str, ...] = ("bernoulli", "argmax", "soft")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """A length-``k`` snippet ``(s_0, a_0, s_1, ..., a_{k-1}, s_k)``.

    Attributes
    ----------
    states : tuple[int, ...]
        ``k + 1`` state ids.
    actions : tuple[int, ...]
        ``k`` action ids.
    source_trajectory : int
        Id of the trajectory the segment was cut from, ``-1`` if synthetic.
    start_index : int
        Offset of ``states[0]`` inside that trajectory.
    """

    states: tuple[int, ...]
    actions: tuple[int, ...]
    source_trajectory: int = -1
    start_index: int = 0

    def __post_init__(self) -> None:
        states = tuple(int(s) for s in self.states)
        actions = tuple(int(a) for a in self.actions)
        if len(states) != len(actions) + 1:
            raise ConfigurationError(
                f"segment needs len(states) == len(actions) + 1, got "
                f"{len(states)} and {len(actions)}"
            )
        if not actions:
            raise ConfigurationError("segment must contain at least one transition")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def k(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def visited_states(self) -> IntArray:
        """States at which an action was taken (``s_0 .. s_{k-1}``)."""
        return np.asarray(self.states[:-1], dtype=np.int64)

    def action_array(self) -> IntArray:
        return np.asarray(self.actions, dtype=np.int64)

    def next_states(self) -> IntArray:
        return np.asarray(self.states[1:], dtype=np.int64)

    def window(self, offset: int, length: int) -> Segment:
        """Sub-segment of ``length`` transitions starting at ``offset``."""
        if offset < 0 or length < 1 or offset + length > self.k:
            raise ConfigurationError(
                f"window [{offset}, {offset + length}) outside segment of length {self.k}"
            )
        return Segment(
            self.states[offset : offset + length + 1],
            self.actions[offset : offset + length],
            self.source_trajectory,
            self.start_index + offset,
        )

    def check_range(self, n_states: int, n_actions: int) -> None:
        if any(not 0 <= s < n_states for s in self.states):
            raise EvaluationError(f"segment state id outside [0, {n_states})")
        if any(not 0 <= a < n_actions for a in self.actions):
            raise EvaluationError(f"segment action id outside [0, {n_actions})")


@dataclass(frozen=True)
class PreferencePair:
    """Two equal-length segments and the probability ``y`` that the first wins."""

    first: Segment
    second: Segment
    label: float

    def __post_init__(self) -> None:
        if self.first.k != self.second.k:
            raise ConfigurationError(
                f"segments of a pair must have equal length, got {self.first.k} and "
                f"{self.second.k}"
            )
        label = float(self.label)
        if not 0.0 <= label <= 1.0:
            raise ConfigurationError(f"label must lie in [0, 1], got {label!r}")
        object.__setattr__(self, "label", label)

    @property
    def k(self) -> int:
        return self.first.k

    def swapped(self) -> PreferencePair:
        """``(second, first, 1 - y)``: the same preference stated the other way."""
        return PreferencePair(self.second, self.first, 1.0 - self.label)


@dataclass(frozen=True)
class RankingQuery:
    """``K`` equal-length segments and their order from best to worst.

    ``permutation[0]`` is the index (0-based) of the most preferred segment.
    """

    segments: tuple[Segment, ...]
    permutation: tuple[int, ...]

    def __post_init__(self) -> None:
        segments = tuple(self.segments)
        permutation = tuple(int(i) for i in self.permutation)
        if len(segments) < 2:
            raise ConfigurationError(f"a ranking needs >= 2 segments, got {len(segments)}")
        if sorted(permutation) != list(range(len(segments))):
            raise ConfigurationError(
                f"permutation {permutation!r} is not a bijection on {len(segments)} segments"
            )
        if len({seg.k for seg in segments}) != 1:
            raise ConfigurationError("all segments of a ranking must have equal length")
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "permutation", permutation)

    @property
    def k(self) -> int:
        return self.segments[0].k

    def ordered(self) -> tuple[Segment, ...]:
        """Segments from most to least preferred."""
        return tuple(self.segments[i] for i in self.permutation)


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Reward-free offline transitions ``(s, a, s')`` collected by a behavior policy."""

    transitions: IntArray
    behavior_policy_id: str = ""

    def __post_init__(self) -> None:
        arr = np.array(self.transitions, dtype=np.int64, copy=True).reshape(-1, 3)
        arr.setflags(write=False)
        object.__setattr__(self, "transitions", arr)

    def __len__(self) -> int:
        return self.transitions.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionDataset):
            return NotImplemented
        return self.behavior_policy_id == other.behavior_policy_id and np.array_equal(
            self.transitions, other.transitions
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def states(self) -> IntArray:
        return self.transitions[:, 0]

    @property
    def actions(self) -> IntArray:
        return self.transitions[:, 1]

    @property
    def next_states(self) -> IntArray:
        return self.transitions[:, 2]

    @classmethod
    def from_trajectories(
        cls, trajectories: Iterable[Trajectory], behavior_policy_id: str = ""
    ) -> TransitionDataset:
        rows = [traj.transitions() for traj in trajectories]
        stacked = np.concatenate(rows) if rows else np.empty((0, 3), dtype=np.int64)
        return cls(stacked, behavior_policy_id)

    def check_range(self, n_states: int, n_actions: int) -> None:
        if len(self) == 0:
            return
        if self.states.min() < 0 or max(self.states.max(), self.next_states.max()) >= n_states:
            raise EvaluationError(f"transition state id outside [0, {n_states})")
        if self.actions.min() < 0 or self.actions.max() >= n_actions:
            raise EvaluationError(f"transition action id outside [0, {n_actions})")


@dataclass(frozen=True)
class PreferenceDataset:
    """Labelled preference pairs and rankings, plus any stored offline transitions."""

    pairs: tuple[PreferencePair, ...] = ()
    rankings: tuple[RankingQuery, ...] = ()
    transitions: TransitionDataset = field(
        default_factory=lambda: TransitionDataset(np.empty((0, 3), dtype=np.int64))
    )

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "rankings", tuple(self.rankings))

    def __len__(self) -> int:
        return len(self.pairs) + len(self.rankings) + len(self.transitions)

    def segments(self) -> list[Segment]:
        out: list[Segment] = []
        for pair in self.pairs:
            out.extend((pair.first, pair.second))
        for ranking in self.rankings:
            out.extend(ranking.segments)
        return out

    def segment_transitions(self) -> TransitionDataset:
        """Every ``(s, a, s')`` inside the labelled segments, in file order."""
        rows = [
            np.stack([seg.visited_states(), seg.action_array(), seg.next_states()], axis=1)
            for seg in self.segments()
        ]
        stacked = np.concatenate(rows) if rows else np.empty((0, 3), dtype=np.int64)
        return TransitionDataset(stacked, self.transitions.behavior_policy_id)

    def check_range(self, n_states: int, n_actions: int) -> None:
        for seg in self.segments():
            seg.check_range(n_states, n_actions)
        self.transitions.check_range(n_states, n_actions)


# ---------------------------------------------------------------------------
# Returns and labelers
# ---------------------------------------------------------------------------


def segment_weights(k: int, gamma: float = 1.0, discount_in_segment: bool = False) -> np.ndarray:
    """Per-step weights ``w_t``: ones, or ``gamma**t`` when discounting in-segment."""
    if discount_in_segment:
        return gamma ** np.arange(k, dtype=np.float64)
    return np.ones(k)


def segment_return(
    segment: Segment,
    reward: np.ndarray,
    discount_in_segment: bool = False,
    *,
    gamma: float = 1.0,
) -> float:
    """``sum_t w_t r(s_t, a_t)`` over the segment."""
    reward = np.asarray(reward, dtype=np.float64)
    values = reward[segment.visited_states(), segment.action_array()]
    return float(values @ segment_weights(segment.k, gamma, discount_in_segment))


def bradley_terry_prob(return1: float, return2: float) -> float:
    """Probability that the first segment is preferred, ``logistic(R1 - R2)``."""
    return float(expit(return1 - return2))


def label_pair(
    seg1: Segment,
    seg2: Segment,
    reward: np.ndarray,
    mode: LabelMode = "bernoulli",
    discount_in_segment: bool = False,
    seed: int | np.random.Generator | None = None,
    *,
    gamma: float = 1.0,
) -> PreferencePair:
    """Label a pair with a scripted Bradley-Terry labeller.

    Parameters
    ----------
    mode : ``"bernoulli"`` | ``"argmax"`` | ``"soft"``
        ``bernoulli`` samples ``y ~ Bernoulli(P)``; ``argmax`` gives 1 for the
        higher return, 0 for the lower and 0.5 on a tie; ``soft`` stores ``P``.
    seed : int | np.random.Generator | None
        Only consumed in ``bernoulli`` mode.
    """
    r1 = segment_return(seg1, reward, discount_in_segment, gamma=gamma)
    r2 = segment_return(seg2, reward, discount_in_segment, gamma=gamma)
    if mode == "argmax":
        label = 1.0 if r1 > r2 else 0.0 if r1 < r2 else 0.5
    elif mode == "soft":
        label = bradley_terry_prob(r1, r2)
    elif mode == "bernoulli":
        rng = np.random.default_rng(seed)
        label = float(rng.random() < bradley_terry_prob(r1, r2))
    else:
        raise ConfigurationError(f"Unsupported label mode {mode!r} (expected one of {LABEL_MODES})")
    return PreferencePair(seg1, seg2, label)


def label_ranking(
    segments: Sequence[Segment],
    reward: np.ndarray,
    discount_in_segment: bool = False,
    seed: int | np.random.Generator | None = None,
    *,
    gamma: float = 1.0,
) -> RankingQuery:
    """Sample a Plackett-Luce ordering of *segments* from their returns.

    At each stage the next winner is drawn among the remaining segments with
    probability proportional to ``exp(R_j)``.
    """
    if len(segments) < 2:
        raise ConfigurationError(f"a ranking needs >= 2 segments, got {len(segments)}")
    rng = np.random.default_rng(seed)
    returns = np.array(
        [segment_return(seg, reward, discount_in_segment, gamma=gamma) for seg in segments]
    )
    remaining = list(range(len(segments)))
    order: list[int] = []
    while len(remaining) > 1:
        probs = softmax(returns[remaining])
        pick = int(rng.choice(len(remaining), p=probs))
        order.append(remaining.pop(pick))
    order.append(remaining[0])
    return RankingQuery(tuple(segments), tuple(order))


# ---------------------------------------------------------------------------
# Segment sampling and augmentation
# ---------------------------------------------------------------------------


def sample_segments(
    trajectories: Sequence[Trajectory],
    k: int,
    n: int,
    seed: int | np.random.Generator,
) -> list[Segment]:
    """Draw ``n`` segments uniformly over all valid ``(trajectory, start)`` pairs.

    Trajectories shorter than ``k`` are skipped with a warning.

    Raises
    ------
    ConfigurationError
        If ``k < 1`` or no trajectory is long enough.
    """
    if k < 1:
        raise ConfigurationError(f"segment length k must be >= 1, got {k}")
    usable = [traj for traj in trajectories if len(traj) >= k]
    if len(usable) < len(trajectories):
        warnings.warn(
            f"{len(trajectories) - len(usable)} trajectories shorter than k={k} were skipped",
            stacklevel=2,
        )
    if not usable:
        raise ConfigurationError(f"k={k} exceeds the length of every trajectory")
    starts_per_traj = np.array([len(traj) - k + 1 for traj in usable])
    cumulative = np.cumsum(starts_per_traj)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, cumulative[-1], size=n)
    segments = []
    for flat in draws:
        idx = int(np.searchsorted(cumulative, flat, side="right"))
        start = int(flat - (cumulative[idx - 1] if idx else 0))
        traj = usable[idx]
        segments.append(
            Segment(
                traj.states[start : start + k + 1],
                traj.actions[start : start + k],
                traj.trajectory_id,
                start,
            )
        )
    return segments


def subsample_batch(
    pairs: Sequence[PreferencePair], s: int, rng: np.random.Generator
) -> list[PreferencePair]:
    """Cut every pair in the batch to ``s`` steps at one shared random offset.

    Both segments of every pair use the same start, drawn uniformly from
    ``{0, ..., k - s}``; labels are unchanged.
    """
    if not pairs:
        return []
    k = min(pair.k for pair in pairs)
    if not 1 <= s <= k:
        raise ConfigurationError(f"subsample length s={s} must lie in [1, k={k}]")
    if s == k and all(pair.k == k for pair in pairs):
        return list(pairs)
    start = int(rng.integers(0, k - s + 1))
    return [
        PreferencePair(pair.first.window(start, s), pair.second.window(start, s), pair.label)
        for pair in pairs
    ]


# ---------------------------------------------------------------------------
# Dataset builders
# ---------------------------------------------------------------------------


def make_offline_dataset(
    mdp: TabularMdp,
    behavior: Policy,
    n_trajectories: int,
    horizon: int,
    seed: int,
    behavior_policy_id: str = "behavior",
) -> tuple[list[Trajectory], TransitionDataset]:
    """Roll out *behavior* and return the trajectories plus their transitions."""

    if n_trajectories < 1:
        raise ConfigurationError(f"n_trajectories must be >= 1, got {n_trajectories}")
    rng = np.random.default_rng(seed)
    trajectories = [
        rollout(mdp, behavior, horizon, rng, trajectory_id=i) for i in range(n_trajectories)
    ]
    return trajectories, TransitionDataset.from_trajectories(trajectories, behavior_policy_id)


def build_preference_dataset(
    mdp: TabularMdp,
    trajectories: Sequence[Trajectory],
    n_pairs: int,
    k: int,
    mode: LabelMode,
    seed: int,
    *,
    discount_in_segment: bool = False,
    transitions: TransitionDataset | None = None,
    n_rankings: int = 0,
    ranking_size: int = 3,
) -> PreferenceDataset:
    """Sample segments from *trajectories* and label them with ``r_E``."""
    if n_pairs < 0 or n_rankings < 0:
        raise ConfigurationError("n_pairs and n_rankings must be >= 0")
    rng = np.random.default_rng(seed)
    reward = mdp.expert_reward
    gamma = mdp.discount
    segments = sample_segments(trajectories, k, 2 * n_pairs, rng) if n_pairs else []
    pairs = [
        label_pair(segments[2 * i], segments[2 * i + 1], reward, mode, discount_in_segment, rng, gamma=gamma)
        for i in range(n_pairs)
    ]
    rankings = []
    if n_rankings:
        pool = sample_segments(trajectories, k, n_rankings * ranking_size, rng)
        for i in range(n_rankings):
            chunk = pool[i * ranking_size : (i + 1) * ranking_size]
            rankings.append(label_ranking(chunk, reward, discount_in_segment, rng, gamma=gamma))
    if transitions is None:
        transitions = TransitionDataset(np.empty((0, 3), dtype=np.int64))
    return PreferenceDataset(tuple(pairs), tuple(rankings), transitions)


def exhaustive_single_step_pairs(
    mdp: TabularMdp,
    mode: LabelMode = "argmax",
    seed: int = 0,
    reward: np.ndarray | None = None,
) -> list[PreferencePair]:
    """One ``k=1`` pair for every unordered pair of distinct ``(s, a)`` cells.

    Next states are drawn from the dynamics; labels come from *reward*
    (``r_E`` by default).
    """
    rng = np.random.default_rng(seed)
    reward = mdp.expert_reward if reward is None else reward
    cells = [(s, a) for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    steps = [
        Segment((s, int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))), (a,))
        for s, a in cells
    ]
    return [
        label_pair(steps[i], steps[j], reward, mode, False, rng)
        for i, j in itertools.combinations(range(len(steps)), 2)
    ]


def state_action_counts(
    n_states: int,
    n_actions: int,
    pairs: Iterable[PreferencePair] = (),
    transitions: TransitionDataset | None = None,
    rankings: Iterable[RankingQuery] = (),
) -> np.ndarray:
    """Visit counts of every ``(s, a)`` across segments and transitions."""
    counts = np.zeros((n_states, n_actions))
    segments: list[Segment] = []
    for pair in pairs:
        segments.extend((pair.first, pair.second))
    for ranking in rankings:
        segments.extend(ranking.segments)
    for seg in segments:
        np.add.at(counts, (seg.visited_states(), seg.action_array()), 1.0)
    if transitions is not None and len(transitions):
        np.add.at(counts, (transitions.states, transitions.actions), 1.0)
    return counts


# ---------------------------------------------------------------------------
# Records and files
# ---------------------------------------------------------------------------


def segment_to_record(segment: Segment) -> dict[str, Any]:
    return {
        "states": list(segment.states),
        "actions": list(segment.actions),
        "trajectory": segment.source_trajectory,
        "start": segment.start_index,
    }


def record_to_segment(record: dict[str, Any]) -> Segment:
    return Segment(
        tuple(record["states"]),
        tuple(record["actions"]),
        int(record.get("trajectory", -1)),
        int(record.get("start", 0)),
    )


def dataset_to_records(
    dataset: PreferenceDataset, metadata: dict[str, Any] | None = None
) -> Iterable[dict[str, Any]]:
    """Yield one record per pair, ranking and transition.

    A leading ``meta`` record carries the behavior policy id and any extra
    *metadata* (e.g. ``config_hash``); readers ignore unknown meta keys.
    """
    meta = dict(metadata or {})
    if dataset.transitions.behavior_policy_id:
        meta["behavior_policy_id"] = dataset.transitions.behavior_policy_id
    if meta:
        yield {"type": "meta", **meta}
    for pair in dataset.pairs:
        yield {
            "type": "pair",
            "k": pair.k,
            "seg1": segment_to_record(pair.first),
            "seg2": segment_to_record(pair.second),
            "y": pair.label,
        }
    for ranking in dataset.rankings:
        yield {
            "type": "ranking",
            "segments": [segment_to_record(seg) for seg in ranking.segments],
            "perm": list(ranking.permutation),
        }
    for s, a, sp in dataset.transitions.transitions.tolist():
        yield {"type": "transition", "s": s, "a": a, "sp": sp}


def records_to_dataset(records: Iterable[tuple[int, dict[str, Any]]]) -> PreferenceDataset:
    """Rebuild a dataset from ``(position, record)`` tuples.

    Raises
    ------
    DatasetParseError
        On unknown record types, missing keys or records violating a type
        invariant; the position of the offending record is reported.
    """
    pairs: list[PreferencePair] = []
    rankings: list[RankingQuery] = []
    rows: list[tuple[int, int, int]] = []
    behavior_policy_id = ""
    for position, record in records:
        kind = record.get("type")
        try:
            if kind == "pair":
                pair = PreferencePair(
                    record_to_segment(record["seg1"]),
                    record_to_segment(record["seg2"]),
                    record["y"],
                )
                if "k" in record and int(record["k"]) != pair.k:
                    raise ConfigurationError(
                        f"declared k={record['k']} disagrees with segment length {pair.k}"
                    )
                pairs.append(pair)
            elif kind == "ranking":
                rankings.append(
                    RankingQuery(
                        tuple(record_to_segment(seg) for seg in record["segments"]),
                        tuple(record["perm"]),
                    )
                )
            elif kind == "transition":
                rows.append((int(record["s"]), int(record["a"]), int(record["sp"])))
            elif kind == "meta":
                behavior_policy_id = str(record.get("behavior_policy_id", ""))
            else:
                raise DatasetParseError(f"unknown record type {kind!r}", position)
        except KeyError as exc:
            raise DatasetParseError(f"{kind} record is missing key {exc.args[0]!r}", position) from None
        except (ConfigurationError, TypeError) as exc:
            raise DatasetParseError(str(exc), position) from None
    transitions = TransitionDataset(
        np.array(rows, dtype=np.int64).reshape(-1, 3), behavior_policy_id
    )
    return PreferenceDataset(tuple(pairs), tuple(rankings), transitions)


def save_dataset(path: str | Path, dataset: PreferenceDataset, **metadata: Any) -> int:
    """Write *dataset* with the records codec registered for *path*.

    Keyword arguments go into the leading ``meta`` record.

    Returns
    -------
    int
        Number of records written.
    """
    return resolve_codec(path, kind="records").dump(path, dataset_to_records(dataset, metadata))


def load_dataset(path: str | Path) -> PreferenceDataset:
    """Read a dataset written by :func:`save_dataset`."""
    return records_to_dataset(resolve_codec(path, kind="records").iter(path))
