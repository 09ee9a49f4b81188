# Copyright (c) Microsoft. All rights reserved.

"""Unit tests for the reward (max) player."""

import math

import numpy as np
import pytest

from selfplay_ail.bandit.divergences import optimal_mixed_chi2_reward, variational_value
from selfplay_ail.errors import DimensionError, DomainError, InvalidParameterError
from selfplay_ail.game.engine import game_value, run_selfplay
from selfplay_ail.models.game import (
    BoxRegularizer,
    GameConfig,
    LinkFunction,
    MixedQuadraticRegularizer,
    RegularizerSpec,
)
from selfplay_ail.models.tables import ContextDistribution, PolicyTable, RewardTable
from selfplay_ail.players.reward import (
    bregman_divergence,
    context_gaps,
    link_derivative,
    link_value,
    mixed_quadratic_reward_step,
    omd_regret_check,
    omd_reward_step,
    psi_value,
    regularized_best_response,
    reward_objective,
    reward_step,
    sign_reward,
)

EXPERT = PolicyTable(np.array([[0.75, 0.25]]))
MODEL = PolicyTable(np.array([[0.25, 0.75]]))
ONE_CONTEXT = ContextDistribution.uniform(1)


def _box_config(zeta: float = 1.0, link: LinkFunction = LinkFunction.IDENTITY) -> GameConfig:
    return GameConfig(
        iterations=10,
        beta=2.0,
        r_max=1.0,
        link=link,
        regularizer=RegularizerSpec(psi=BoxRegularizer(r_max=1.0), bregman_weight=zeta),
    )


def test_link_functions():
    """Test identity and logistic links and their derivatives."""
    t = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_array_equal(link_value(LinkFunction.IDENTITY, t), t)
    np.testing.assert_array_equal(link_derivative(LinkFunction.IDENTITY, t), 1.0)
    assert link_value(LinkFunction.LOGISTIC, np.array(0.0)) == pytest.approx(-math.log(2.0))
    assert link_derivative(LinkFunction.LOGISTIC, np.array(0.0)) == pytest.approx(0.5)
    # Large arguments stay finite.
    assert np.all(np.isfinite(link_value(LinkFunction.LOGISTIC, np.array([-800.0, 800.0]))))


def test_context_gaps_hand_computed():
    """Test the per-context expert-minus-policy gap."""
    gaps = context_gaps(RewardTable(np.array([[1.0, -1.0]]), 1.0), EXPERT, MODEL)
    np.testing.assert_allclose(gaps, [1.0])


def test_omd_reward_step_hand_computed():
    """Test the projected mirror ascent step, with and without clipping."""
    r0 = RewardTable.zeros((1, 2))
    step = omd_reward_step(r0, EXPERT, MODEL, ONE_CONTEXT, zeta=1.0, r_max=1.0)
    np.testing.assert_allclose(step.values, [[0.5, -0.5]])

    clipped = omd_reward_step(r0, EXPERT, MODEL, ONE_CONTEXT, zeta=0.25, r_max=1.0)
    np.testing.assert_allclose(clipped.values, [[1.0, -1.0]])


def test_omd_reward_step_rejects_non_positive_zeta():
    """Test that the box step needs a positive proximal weight."""
    with pytest.raises(InvalidParameterError):
        omd_reward_step(RewardTable.zeros((1, 2)), EXPERT, MODEL, ONE_CONTEXT, zeta=0.0, r_max=1.0)


def test_mixed_quadratic_step_without_prox_is_closed_form():
    """Test that zeta = 0 reproduces the optimal mixed chi-square reward."""
    rho = ContextDistribution(np.array([0.3, 0.7]))
    p_star = PolicyTable(np.array([[0.6, 0.3, 0.1], [0.2, 0.2, 0.6]]))
    p_k = PolicyTable(np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]]))
    psi = MixedQuadraticRegularizer(c=2.0)
    step = mixed_quadratic_reward_step(RewardTable.zeros((2, 3)), p_star, p_k, rho, psi, zeta=0.0, r_max=100.0)
    np.testing.assert_allclose(step.values, optimal_mixed_chi2_reward(p_star, p_k, 2.0).values, atol=1e-12)


def test_psi_value():
    """Test the box indicator and the mixed quadratic penalty."""
    inside = RewardTable(np.array([[1.0, -1.0]]), 1.0)
    assert psi_value(BoxRegularizer(r_max=1.0), inside, EXPERT, MODEL, ONE_CONTEXT) == 0.0
    with pytest.raises(DomainError):
        psi_value(BoxRegularizer(r_max=0.5), inside, EXPERT, MODEL, ONE_CONTEXT)
    penalty = psi_value(MixedQuadraticRegularizer(c=2.0), inside, EXPERT, MODEL, ONE_CONTEXT)
    assert penalty == pytest.approx(2.0)


def test_bregman_divergence():
    """Test the Euclidean generator and its shape check."""
    assert bregman_divergence(np.array([1.0, 2.0]), np.zeros(2)) == pytest.approx(2.5)
    with pytest.raises(DimensionError):
        bregman_divergence(np.zeros(2), np.zeros(3))


def test_reward_objective_reduces_to_game_value():
    """Test that the unregularized identity-link objective is the game value."""
    r = RewardTable(np.array([[0.4, -0.2]]), 1.0)
    reg = RegularizerSpec(psi=BoxRegularizer(r_max=1.0))
    value = reward_objective(r, EXPERT, MODEL, ONE_CONTEXT, LinkFunction.IDENTITY, reg, RewardTable.zeros((1, 2)))
    assert value == pytest.approx(game_value(MODEL, r, EXPERT, ONE_CONTEXT))

    prox = RegularizerSpec(psi=BoxRegularizer(r_max=1.0), bregman_weight=2.0)
    with_prox = reward_objective(r, EXPERT, MODEL, ONE_CONTEXT, LinkFunction.IDENTITY, prox, RewardTable.zeros((1, 2)))
    assert with_prox == pytest.approx(value - 2.0 * 0.5 * (0.4**2 + 0.2**2))


def test_logistic_objective_at_zero_reward():
    """Test that the logistic link gives -log 2 at the zero reward."""
    reg = RegularizerSpec(psi=BoxRegularizer(r_max=1.0))
    zero = RewardTable.zeros((1, 2))
    value = reward_objective(zero, EXPERT, MODEL, ONE_CONTEXT, LinkFunction.LOGISTIC, reg, zero)
    assert value == pytest.approx(-math.log(2.0), abs=1e-15)


def _quadratic_reg(c: float) -> RegularizerSpec:
    return RegularizerSpec(psi=MixedQuadraticRegularizer(c=c, alpha=0.5))


@pytest.mark.parametrize("c", [0.5, 2.0, 8.0])
def test_objective_at_closed_form_reward_is_variational_value(small_instance, c):
    """Test that the unlinked quadratic objective equals the variational value at its maximizer."""
    p_star, p_k, rho = small_instance.p_star, small_instance.p_ref, small_instance.rho
    r_star = optimal_mixed_chi2_reward(p_star, p_k, c, 0.5)
    zero = RewardTable.zeros(p_star.shape)
    value = reward_objective(r_star, p_star, p_k, rho, LinkFunction.IDENTITY, _quadratic_reg(c), zero)
    assert value == pytest.approx(variational_value(r_star, p_star, p_k, rho, c), abs=1e-10)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_closed_form_reward_beats_random_rewards(small_instance, c):
    """Test that no reward in [-1/c, 1/c] scores above the closed-form maximizer."""
    p_star, p_k, rho = small_instance.p_star, small_instance.p_ref, small_instance.rho
    zero = RewardTable.zeros(p_star.shape)
    reg = _quadratic_reg(c)

    def objective(r: RewardTable) -> float:
        return reward_objective(r, p_star, p_k, rho, LinkFunction.IDENTITY, reg, zero)

    best = objective(optimal_mixed_chi2_reward(p_star, p_k, c, 0.5))
    rng = np.random.default_rng(17)
    for _ in range(1000):
        candidate = RewardTable(rng.uniform(-1.0 / c, 1.0 / c, size=p_star.shape), 1.0 / c)
        assert objective(candidate) <= best + 1e-12


def test_sign_reward_maximizes_game_value_over_the_box(small_instance):
    """Test that random box rewards never beat the sign reward against a fixed policy."""
    p_star, p_bar, rho = small_instance.p_star, small_instance.p_ref, small_instance.rho
    r_max = 1.5
    best = game_value(p_bar, sign_reward(p_star, p_bar, r_max), p_star, rho)
    candidates = np.random.default_rng(23).uniform(-r_max, r_max, size=(10_000, *p_star.shape))
    values = np.einsum("x,xy,kxy->k", rho.probs, p_star.probs - p_bar.probs, candidates)
    assert values.max() <= best + 1e-10


def test_reward_step_dispatch_and_logistic_weights():
    """Test that the logistic link halves the gain at a zero reward."""
    r0 = RewardTable.zeros((1, 2))
    identity = reward_step(_box_config(zeta=4.0), r0, EXPERT, MODEL, ONE_CONTEXT)
    logistic = reward_step(_box_config(zeta=4.0, link=LinkFunction.LOGISTIC), r0, EXPERT, MODEL, ONE_CONTEXT)
    np.testing.assert_allclose(identity.values, [[0.125, -0.125]])
    np.testing.assert_allclose(logistic.values, 0.5 * identity.values)


def test_sign_reward_and_best_response():
    """Test the box best response and the mixed quadratic best response."""
    np.testing.assert_array_equal(sign_reward(EXPERT, MODEL, 2.0).values, [[2.0, -2.0]])
    np.testing.assert_array_equal(sign_reward(EXPERT, EXPERT, 2.0).values, [[0.0, 0.0]])
    quadratic = regularized_best_response(MixedQuadraticRegularizer(c=2.0), EXPERT, MODEL, 1.0)
    np.testing.assert_allclose(quadratic.values, [[0.25, -0.25]])


def test_sign_reward_attains_twice_total_variation():
    """Test that the box best response attains 2 R_max TV."""
    value = game_value(MODEL, sign_reward(EXPERT, MODEL, 1.5), EXPERT, ONE_CONTEXT)
    assert value == pytest.approx(2 * 1.5 * 0.5)


def test_omd_regret_bound_holds_along_a_run(small_instance):
    """Test the reward player's regret against its proximal bound on a box game."""
    config = _box_config(zeta=2.0)
    history = run_selfplay(config, small_instance.p_star, small_instance.p_ref, small_instance.rho)
    lhs, rhs = omd_regret_check(
        history.policies, history.player_rewards, small_instance.p_star, small_instance.rho, 2.0, 1.0
    )
    assert lhs <= rhs + 1e-10


def test_omd_regret_check_rejects_empty_input():
    """Test argument validation of the regret check."""
    with pytest.raises(InvalidParameterError):
        omd_regret_check([EXPERT], [], EXPERT, ONE_CONTEXT, 1.0, 1.0)
