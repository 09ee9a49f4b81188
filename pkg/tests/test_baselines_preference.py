# Copyright (c) Microsoft. All rights reserved.

"""Unit tests for the preference-based baselines (SPPO, INPO, iterative DPO)."""

from collections.abc import Callable
from itertools import pairwise

import numpy as np
import pytest
from pydantic import ValidationError

from selfplay_ail.bandit.core import random_policy
from selfplay_ail.baselines.preference import (
    chi2_ail_sppo_gradient,
    chi2_ail_sppo_objective,
    contraction_check_dpo,
    expert_oracle,
    inpo_displayed_gradient,
    inpo_displayed_loss,
    inpo_gradient,
    inpo_loss,
    inpo_step,
    inpo_train,
    iterative_dpo_iterates,
    iterative_dpo_step,
    sppo_gradient,
    sppo_loss,
    sppo_step,
    sppo_train,
    win_rate,
)
from selfplay_ail.errors import DimensionError, DomainError, InvalidParameterError, UnsupportedOracleError
from selfplay_ail.models.preferences import InpoConfig, PreferenceOracle
from selfplay_ail.models.tables import BanditSpace, ContextDistribution, PolicyTable, RewardTable, make_rng


def _general_oracle(n_contexts: int, n_responses: int, seed: int) -> PreferenceOracle:
    upper = make_rng(seed).uniform(0.05, 0.95, size=(n_contexts, n_responses, n_responses))
    table = np.triu(upper, k=1)
    table = table + np.transpose(1.0 - table, (0, 2, 1)) * np.tril(np.ones((n_responses, n_responses)), k=-1)
    table[:, np.arange(n_responses), np.arange(n_responses)] = 0.5
    return PreferenceOracle.general(table)


def _logit_policy(space: BanditSpace, seed: int) -> PolicyTable:
    return PolicyTable.from_logits(make_rng(seed).normal(size=space.shape))


SPACE = BanditSpace(n_contexts=2, n_responses=4)
RHO = ContextDistribution(np.array([0.4, 0.6]))


def test_oracle_validation():
    """Test shape, range and symmetry checks of preference tables."""
    with pytest.raises(DimensionError):
        PreferenceOracle.general(np.full((1, 2, 3), 0.5))
    with pytest.raises(DomainError):
        PreferenceOracle.general(np.array([[[0.5, 1.2], [-0.2, 0.5]]]))
    with pytest.raises(DomainError):
        PreferenceOracle.general(np.array([[[0.5, 0.7], [0.7, 0.5]]]))
    assert _general_oracle(2, 4, 0).kind == "general"


def test_bradley_terry_oracle_and_win_rate():
    """Test that a flat latent reward gives even win rates."""
    oracle = PreferenceOracle.bradley_terry(np.zeros((2, 3)))
    np.testing.assert_allclose(win_rate(PolicyTable.uniform(2, 3), oracle), 0.5)
    tilted = PreferenceOracle.bradley_terry(np.array([[np.log(3.0), 0.0]]))
    assert tilted.preferences[0, 0, 1] == pytest.approx(0.75)


def test_inpo_config_requires_tau_below_eta():
    """Test the tau <= eta constraint."""
    with pytest.raises(ValidationError):
        InpoConfig(eta=1.0, tau=2.0, p_ref=PolicyTable.uniform(1, 2))
    assert InpoConfig(eta=2.0, tau=2.0, p_ref=PolicyTable.uniform(1, 2)).tau == 2.0


def test_sppo_is_scaled_chi2_ail():
    """Test that the SPPO loss and gradient are -1/beta^2 times the chi-square objective, up to a constant."""
    oracle = _general_oracle(2, 4, 1)
    p_k = random_policy(SPACE, 1.0, 2)
    beta = 0.8
    first, second = _logit_policy(SPACE, 3), _logit_policy(SPACE, 4)

    def shifted(pi: PolicyTable) -> float:
        return sppo_loss(pi, p_k, oracle, RHO, beta) + chi2_ail_sppo_objective(pi, p_k, oracle, RHO, beta) / beta**2

    assert shifted(first) == pytest.approx(shifted(second), abs=1e-12)
    np.testing.assert_allclose(
        sppo_gradient(first, p_k, oracle, RHO, beta),
        -chi2_ail_sppo_gradient(first, p_k, oracle, RHO, beta) / beta**2,
        atol=1e-12,
    )


def test_inpo_displayed_and_paired_losses_agree_up_to_constant():
    """Test that sampled-winner and paired INPO losses share their gradient."""
    oracle = _general_oracle(2, 4, 5)
    p_k = random_policy(SPACE, 1.0, 6)
    config = InpoConfig(eta=2.0, tau=0.5, p_ref=random_policy(SPACE, 1.0, 7))
    first, second = _logit_policy(SPACE, 8), _logit_policy(SPACE, 9)

    def gap(pi: PolicyTable) -> float:
        return inpo_displayed_loss(pi, p_k, oracle, RHO, config) - inpo_loss(pi, p_k, oracle, RHO, config)

    assert gap(first) == pytest.approx(gap(second), abs=1e-12)
    np.testing.assert_allclose(
        inpo_displayed_gradient(first, p_k, oracle, RHO, config),
        inpo_gradient(first, p_k, oracle, RHO, config),
        atol=1e-12,
    )


def test_inpo_gradient_matches_finite_differences():
    """Test the paired INPO gradient against central differences."""
    oracle = _general_oracle(2, 4, 10)
    p_k = random_policy(SPACE, 1.0, 11)
    config = InpoConfig(eta=1.5, tau=0.5, p_ref=PolicyTable.uniform(2, 4))
    pi = _logit_policy(SPACE, 12)
    logits = np.array(pi.logits)
    eps = 1e-6
    numeric = np.zeros_like(logits)
    for index in np.ndindex(*logits.shape):
        up, down = logits.copy(), logits.copy()
        up[index] += eps
        down[index] -= eps
        numeric[index] = (
            inpo_loss(PolicyTable.from_logits(up), p_k, oracle, RHO, config)
            - inpo_loss(PolicyTable.from_logits(down), p_k, oracle, RHO, config)
        ) / (2 * eps)
    np.testing.assert_allclose(inpo_gradient(pi, p_k, oracle, RHO, config), numeric, atol=1e-7)


def _grid_minimizer(loss: Callable[[PolicyTable], float]) -> float:
    """Probability of response 0 minimizing ``loss`` over a fine grid of 1x2 policies."""
    grid = np.linspace(1e-3, 1 - 1e-3, 9981)
    values = [loss(PolicyTable(np.array([[t, 1 - t]]))) for t in grid]
    return float(grid[int(np.argmin(values))])


ONE_CONTEXT = ContextDistribution.uniform(1)
TWO_ARM_POLICY = PolicyTable(np.array([[0.4, 0.6]]))
TWO_ARM_ORACLE = PreferenceOracle.bradley_terry(np.array([[1.0, 0.0]]))


def test_sppo_step_reaches_grid_minimizer():
    """Test that a long SPPO inner loop lands on the minimizer of its loss."""
    expected = _grid_minimizer(lambda pi: sppo_loss(pi, TWO_ARM_POLICY, TWO_ARM_ORACLE, ONE_CONTEXT, 1.0))
    step = sppo_step(TWO_ARM_POLICY, TWO_ARM_ORACLE, ONE_CONTEXT, 1.0, inner_steps=2000, lr=0.25)
    assert abs(step.probs[0, 0] - expected) <= 1e-3


def test_inpo_step_reaches_grid_minimizer():
    """Test that a long INPO inner loop lands on the minimizer of its loss."""
    config = InpoConfig(eta=2.0, tau=1.0, p_ref=PolicyTable.uniform(1, 2))
    expected = _grid_minimizer(lambda pi: inpo_loss(pi, TWO_ARM_POLICY, TWO_ARM_ORACLE, ONE_CONTEXT, config))
    step = inpo_step(TWO_ARM_POLICY, TWO_ARM_ORACLE, ONE_CONTEXT, config, inner_steps=2000, lr=0.25)
    assert abs(step.probs[0, 0] - expected) <= 1e-3


def test_inpo_with_tau_equal_to_eta_anchors_on_reference_only():
    """Test that tau = eta drops the current iterate from the anchor."""
    oracle = _general_oracle(2, 4, 13)
    p_k = random_policy(SPACE, 1.0, 14)
    p_ref = random_policy(SPACE, 1.0, 15)
    config = InpoConfig(eta=1.5, tau=1.5, p_ref=p_ref)
    pi = _logit_policy(SPACE, 16)

    anchor = pi.log_probs() - p_ref.log_probs()
    wins = win_rate(p_k, oracle)
    residual = (anchor[:, :, None] - anchor[:, None, :]) - (wins[:, :, None] - wins[:, None, :]) / 1.5
    weights = RHO.probs[:, None, None] * p_k.probs[:, :, None] * p_k.probs[:, None, :]
    assert inpo_loss(pi, p_k, oracle, RHO, config) == pytest.approx(float((weights * residual**2).sum()), abs=1e-12)


def test_sppo_and_inpo_training_run(small_instance):
    """Test that the loss-based preference trainers produce complete histories."""
    oracle = expert_oracle(small_instance.p_star)
    sppo = sppo_train(small_instance.p_star, small_instance.p_ref, oracle, small_instance.rho, 1.0, 2, 5, 0.5)
    assert sppo.iterations == 2
    assert len(sppo.steps) == 10

    config = InpoConfig(eta=1.0, tau=0.5, p_ref=small_instance.p_ref)
    inpo = inpo_train(small_instance.p_star, oracle, small_instance.rho, config, 2, 5, 0.5)
    assert inpo.iterations == 2
    np.testing.assert_array_equal(inpo.policies[0].probs, small_instance.p_ref.probs)

    single = sppo_step(small_instance.p_ref, oracle, small_instance.rho, 1.0, 5, 0.5)
    np.testing.assert_allclose(single.probs, sppo.policies[1].probs, atol=1e-12)
    inpo_single = inpo_step(small_instance.p_ref, oracle, small_instance.rho, config, 5, 0.5)
    np.testing.assert_allclose(inpo_single.probs, inpo.policies[1].probs, atol=1e-12)


def test_iterative_dpo_with_unit_beta_lands_on_expert(small_instance):
    """Test that one DPO step at beta = 1 from uniform recovers the expert."""
    oracle = expert_oracle(small_instance.p_star)
    step = iterative_dpo_step(PolicyTable.uniform(2, 3), oracle, beta=1.0)
    np.testing.assert_allclose(step.probs, small_instance.p_star.probs, atol=1e-9)


def test_iterative_dpo_does_not_depend_on_reference_response(small_instance):
    """Test that the anchor response cancels under Bradley-Terry."""
    oracle = expert_oracle(small_instance.p_star)
    first = iterative_dpo_step(small_instance.p_ref, oracle, 3.0, y_ref=0)
    last = iterative_dpo_step(small_instance.p_ref, oracle, 3.0, y_ref=2)
    np.testing.assert_allclose(first.probs, last.probs, atol=1e-12)
    with pytest.raises(InvalidParameterError):
        iterative_dpo_step(small_instance.p_ref, oracle, 3.0, y_ref=3)


def test_iterative_dpo_rejects_general_oracle():
    """Test that the closed form needs a Bradley-Terry oracle."""
    oracle = PreferenceOracle.general(np.array([[[0.5, 0.7], [0.3, 0.5]]]))
    with pytest.raises(UnsupportedOracleError):
        iterative_dpo_step(PolicyTable.uniform(1, 2), oracle, 1.0)


def test_iterative_dpo_contracts(default_bandit):
    """Test the three-point descent of iterated DPO with a large temperature."""
    oracle = expert_oracle(default_bandit.p_star)
    history = iterative_dpo_iterates(default_bandit.p_ref, oracle, 25.0, 20)
    assert len(history) == 21
    for _, lhs, rhs in contraction_check_dpo(history, default_bandit.p_star, default_bandit.rho):
        assert lhs <= rhs + 1e-12


def test_iterative_dpo_distance_to_expert_strictly_decreases(default_bandit):
    """Test that every policy change brings the iterate strictly closer to the expert."""
    oracle = expert_oracle(default_bandit.p_star)
    history = iterative_dpo_iterates(default_bandit.p_ref, oracle, 25.0, 20)
    distances = [lhs for _, lhs, _ in contraction_check_dpo(history, default_bandit.p_star, default_bandit.rho)]
    assert all(later < earlier for earlier, later in pairwise(distances))


def test_iterative_dpo_reads_odds_from_the_preference_table():
    """Test that the update follows the table even when the latent reward says otherwise."""
    oracle = PreferenceOracle(
        kind="bradley_terry",
        preferences=np.array([[[0.5, 0.75], [0.25, 0.5]]]),
        latent_reward=RewardTable.zeros((1, 2)),
    )
    step = iterative_dpo_step(PolicyTable.uniform(1, 2), oracle, beta=1.0)
    np.testing.assert_allclose(step.probs, [[0.75, 0.25]], atol=1e-12)


def test_iterative_dpo_rejects_certain_preferences():
    """Test that a preference of exactly 0 or 1 has no finite odds."""
    oracle = PreferenceOracle(
        kind="bradley_terry",
        preferences=np.array([[[0.5, 1.0], [0.0, 0.5]]]),
        latent_reward=RewardTable.zeros((1, 2)),
    )
    with pytest.raises(DomainError):
        iterative_dpo_step(PolicyTable.uniform(1, 2), oracle, beta=1.0)
