"""End-to-end tests of the IPL training loop on small tabular problems."""

from __future__ import annotations

import math

import numpy as np
import pytest

from iplearn import (
    ConfigurationError,
    Policy,
    PreferenceDataset,
    PreferencePair,
    Segment,
    TabularMdp,
    TrainingDivergenceError,
    build_preference_dataset,
    soft_policy_value,
)
from iplearn.data import state_action_counts
from iplearn.ipl import IplConfig, IplTrainer, train_ipl


@pytest.mark.parametrize("variant", ["xql", "iql", "awac"])
def test_every_variant_trains(variant, quick_config, pref_dataset, small_mdp):
    """Each variant runs, logs two evaluation rows and returns a valid policy."""
    config = quick_config.replace(variant=variant)
    artifacts = train_ipl(config, pref_dataset, mdp_for_eval=small_mdp)
    assert artifacts.method == f"ipl-{variant}"
    assert artifacts.steps == 20
    assert [row["step"] for row in artifacts.metrics] == [10, 20]
    assert artifacts.metrics.last["gt_return"] is not None
    np.testing.assert_allclose(artifacts.policy.probs.sum(axis=1), 1.0)
    assert artifacts.implicit_reward.shape == (5, 3)
    assert (artifacts.v is None) == (variant == "awac")


def test_training_is_deterministic(quick_config, pref_dataset, small_mdp):
    a = train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp)
    b = train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp)
    np.testing.assert_array_equal(a.q.params.values, b.q.params.values)
    assert a.metrics.rows == b.metrics.rows


def test_seed_changes_batches(quick_config, pref_dataset, small_mdp):
    a = train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp)
    b = train_ipl(quick_config.replace(seed=1), pref_dataset, mdp_for_eval=small_mdp)
    assert not np.array_equal(a.q.params.values, b.q.params.values)


def test_full_batch_training_fits_preferences(quick_config, pref_dataset, small_mdp):
    """With full batches the preference loss drops below the indifferent ln 2."""
    config = quick_config.replace(
        total_steps=200, eval_interval=200, pref_batch_size=None, offline_batch_size=None, q_lr=0.05
    )
    artifacts = train_ipl(config, pref_dataset, mdp_for_eval=small_mdp)
    assert artifacts.metrics.last["pref_loss"] < math.log(2.0)


def test_callback_sees_every_evaluation(quick_config, pref_dataset, small_mdp):
    seen = []
    train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp, on_eval=lambda step, row: seen.append(step))
    assert seen == [10, 20]


def test_final_step_is_always_evaluated(quick_config, pref_dataset, small_mdp):
    config = quick_config.replace(total_steps=15)
    artifacts = train_ipl(config, pref_dataset, mdp_for_eval=small_mdp)
    assert [row["step"] for row in artifacts.metrics] == [10, 15]


def test_behavior_policy_and_support(quick_config, pref_dataset, small_mdp):
    artifacts = train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp)
    counts = state_action_counts(5, 3, pref_dataset.pairs, pref_dataset.transitions)
    np.testing.assert_array_equal(artifacts.support_mask, counts > 0)
    np.testing.assert_allclose(artifacts.behavior_policy.probs.sum(axis=1), 1.0)


def test_full_space_support(quick_config, pref_dataset, small_mdp):
    config = quick_config.replace(regularize_full_space=True)
    artifacts = train_ipl(config, pref_dataset, mdp_for_eval=small_mdp)
    assert artifacts.support_mask.all()


def test_subsampled_segments(quick_config, pref_dataset, small_mdp):
    artifacts = train_ipl(quick_config.replace(s=2), pref_dataset, mdp_for_eval=small_mdp)
    assert artifacts.steps == 20


def test_oracle_gap_is_logged(quick_config, pref_dataset, small_mdp):
    artifacts = train_ipl(quick_config, pref_dataset, mdp_for_eval=small_mdp, oracle_rstar=np.zeros((5, 3)))
    gap = artifacts.metrics.last["oracle_reward_gap"]
    mask = artifacts.support_mask
    assert gap == pytest.approx(float(np.max(np.abs(artifacts.implicit_reward)[mask])))


def test_training_without_mdp(quick_config, pref_dataset):
    """Sizes come from the data; no ground-truth return is available."""
    artifacts = train_ipl(quick_config, pref_dataset)
    assert artifacts.implicit_reward is None
    assert artifacts.metrics.last["gt_return"] is None
    assert artifacts.q.n_states <= 5


def test_segments_serve_as_offline_data(quick_config, pref_dataset, small_mdp):
    bare = PreferenceDataset(pref_dataset.pairs)
    trainer = IplTrainer(quick_config, bare, mdp=small_mdp)
    assert trainer.offline == bare.segment_transitions()


def test_mlp_representation(quick_config, pref_dataset, small_mdp):
    config = quick_config.replace(representation="mlp", hidden_sizes=(8,))
    artifacts = train_ipl(config, pref_dataset, mdp_for_eval=small_mdp)
    assert artifacts.policy_fn is not None
    assert artifacts.param_count() == sum(fn.param_count() for fn in artifacts.learnables())
    np.testing.assert_allclose(artifacts.policy.probs.sum(axis=1), 1.0)


def test_mlp_target_network_lags(quick_config, pref_dataset, small_mdp):
    config = quick_config.replace(representation="mlp", hidden_sizes=(8,), target_update_rate=0.1)
    trainer = IplTrainer(config, pref_dataset, mdp=small_mdp)
    trainer.step()
    assert trainer.q_target is not trainer.q
    assert not np.array_equal(trainer.q_target.params.values, trainer.q.params.values)


def test_ranking_loss_trains(quick_config, small_mdp, offline_data):
    trajectories, transitions = offline_data
    ranked = build_preference_dataset(
        small_mdp, trajectories, 0, 3, "bernoulli", seed=2, transitions=transitions, n_rankings=6, ranking_size=3
    )
    artifacts = train_ipl(quick_config.replace(loss="ranking"), ranked, mdp_for_eval=small_mdp)
    assert artifacts.metrics.last["pref_loss"] is not None


def _one_pair_bandit():
    """One context, two actions, the first preferred; r_E agrees with the label."""
    mdp = TabularMdp(np.ones((1, 2, 1)), np.array([[1.0, 0.0]]), 0.0, np.array([1.0]))
    pair = PreferencePair(Segment((0, 0), (0,)), Segment((0, 0), (1,)), 1.0)
    return mdp, PreferenceDataset((pair,))


@pytest.mark.parametrize("variant", ["xql", "iql", "awac"])
def test_soft_value_improves_monotonically(variant):
    """Over the second half of training the soft value of the evolving policy never drops."""
    mdp, pref = _one_pair_bandit()
    config = IplConfig(
        variant=variant,
        gamma=0.0,
        k=1,
        lam=1.0,
        alpha=1.0,
        beta=1.0,
        regularize_full_space=True,
        optimizer="sgd",
        q_lr=0.5,
        v_lr=0.5,
        total_steps=400,
        eval_interval=20,
        pref_batch_size=None,
        offline_batch_size=None,
    )
    trainer = IplTrainer(config, pref, mdp=mdp)
    mu = Policy.uniform(1, 2)
    values = []
    trainer.run(
        lambda step, row: values.append(
            soft_policy_value(mdp, trainer.current_policy(), mdp.expert_reward, config.alpha, mu)
        )
    )
    assert len(values) == 20
    tail = np.array(values[len(values) // 2 :])
    assert np.all(np.diff(tail) >= -1e-6)
    assert values[-1] > soft_policy_value(mdp, mu, mdp.expert_reward, config.alpha, mu)


# ── Errors ──────────────────────────────────────────────────────────────────


def test_gamma_must_match_mdp(quick_config, pref_dataset, small_mdp):
    with pytest.raises(ConfigurationError, match="discount"):
        train_ipl(quick_config.replace(gamma=0.5), pref_dataset, mdp_for_eval=small_mdp)


def test_pairwise_needs_pairs(quick_config, small_mdp):
    with pytest.raises(ConfigurationError, match="at least one preference pair"):
        train_ipl(quick_config, PreferenceDataset(), mdp_for_eval=small_mdp)


def test_ranking_needs_rankings(quick_config, pref_dataset, small_mdp):
    with pytest.raises(ConfigurationError, match="at least one ranking"):
        train_ipl(quick_config.replace(loss="ranking"), pref_dataset, mdp_for_eval=small_mdp)


def test_exact_expectation_needs_mdp(quick_config, pref_dataset):
    with pytest.raises(ConfigurationError, match="evaluation MDP"):
        train_ipl(quick_config.replace(expectation="exact"), pref_dataset)


def test_divergence_bound_stops_training(quick_config, pref_dataset, small_mdp):
    """The first step starts from zero rewards; the second already exceeds a tiny bound."""
    config = quick_config.replace(divergence_bound=1e-9)
    with pytest.raises(TrainingDivergenceError, match="divergence bound") as info:
        train_ipl(config, pref_dataset, mdp_for_eval=small_mdp)
    assert "at step 2" in str(info.value)
    assert info.value.exit_code == 3
