import numpy as np
import pytest

from iplearn import (
    Policy,
    PreferenceDataset,
    PreferencePair,
    Segment,
    build_preference_dataset,
    make_gridworld,
    make_offline_dataset,
    make_random_mdp,
)
from iplearn.ipl import IplConfig

# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------


@pytest.fixture
def small_mdp():
    """Random 5-state, 3-action MDP with gamma 0.9."""
    return make_random_mdp(5, 3, gamma=0.9, branching_factor=2, seed=7)


@pytest.fixture
def gridworld():
    """Deterministic 3x3 grid with the goal in the bottom-right corner."""
    return make_gridworld(3, 3, (2, 2), gamma=0.9)


@pytest.fixture
def uniform_policy(small_mdp):
    """Uniform policy over the actions of ``small_mdp``."""
    return Policy.uniform(small_mdp.n_states, small_mdp.n_actions)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@pytest.fixture
def offline_data(small_mdp, uniform_policy):
    """Four uniform-policy trajectories of length 12 and their transitions."""
    return make_offline_dataset(small_mdp, uniform_policy, 4, 12, seed=3)


@pytest.fixture
def pref_dataset(small_mdp, offline_data):
    """Twelve argmax-labelled pairs of length-3 segments plus the offline transitions."""
    trajectories, transitions = offline_data
    return build_preference_dataset(
        small_mdp, trajectories, 12, 3, "argmax", seed=5, transitions=transitions
    )


@pytest.fixture
def single_step_pairs():
    """Two single-step pairs over a 2-state, 2-action space."""
    return [
        PreferencePair(Segment((0, 1), (0,)), Segment((0, 0), (1,)), 1.0),
        PreferencePair(Segment((1, 0), (1,)), Segment((1, 1), (0,)), 0.0),
    ]


@pytest.fixture
def tiny_dataset(single_step_pairs):
    """The single-step pairs as a dataset without stored transitions."""
    return PreferenceDataset(tuple(single_step_pairs))


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------


@pytest.fixture
def quick_config(small_mdp):
    """A short tabular run matching ``small_mdp`` and ``pref_dataset``."""
    return IplConfig(
        gamma=small_mdp.discount,
        k=3,
        total_steps=20,
        eval_interval=10,
        pref_batch_size=8,
        offline_batch_size=16,
        q_lr=1e-2,
        v_lr=1e-2,
        seed=0,
    )


def finite_difference(f, params, eps=1e-6):
    """Central-difference gradient of the scalar ``f()`` w.r.t. ``params`` (modified in place)."""
    grad = np.zeros_like(params)
    for i in range(params.shape[0]):
        old = params[i]
        params[i] = old + eps
        up = f()
        params[i] = old - eps
        down = f()
        params[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


@pytest.fixture
def numeric_grad():
    """The central-difference helper, for gradient checks."""
    return finite_difference
