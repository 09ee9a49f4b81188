# Copyright (c) Microsoft. All rights reserved.

"""Unit tests for the KL-regularized policy player."""

import math

import numpy as np
import pytest

from selfplay_ail.bandit.core import random_policy
from selfplay_ail.errors import InvalidParameterError
from selfplay_ail.models.tables import BanditSpace, PolicyTable, RewardTable, make_rng
from selfplay_ail.players.policy import (
    kl_regularized_update,
    kl_upper_check,
    log_partition,
    one_step_descent_check,
    reward_mapping,
)


def test_kl_regularized_update_hand_computed():
    """Test the exponential tilt on a two-response example."""
    p_k = PolicyTable.uniform(1, 2)
    reward = RewardTable(np.array([[math.log(3.0), 0.0]]), 2.0)
    updated = kl_regularized_update(p_k, reward, beta=1.0)
    np.testing.assert_allclose(updated.probs, [[0.75, 0.25]], atol=1e-12)
    assert updated.logits is not None


def test_kl_regularized_update_rejects_bad_beta():
    """Test that the temperature must be positive and finite."""
    with pytest.raises(InvalidParameterError):
        kl_regularized_update(PolicyTable.uniform(1, 2), np.zeros((1, 2)), beta=0.0)
    with pytest.raises(InvalidParameterError):
        kl_regularized_update(PolicyTable.uniform(1, 2), np.zeros((1, 2)), beta=math.inf)


def test_log_partition_of_zero_reward_is_zero():
    """Test that a zero reward has log-normalizer zero."""
    np.testing.assert_allclose(log_partition(PolicyTable.uniform(3, 4), np.zeros((3, 4)), 2.0), 0.0, atol=1e-12)


def test_reward_mapping_recovers_reward_up_to_context_constant():
    """Test that beta log(pi'/pi) equals the reward minus a per-context constant."""
    space = BanditSpace(n_contexts=3, n_responses=4)
    rng = make_rng(0)
    p_k = random_policy(space, 1.0, 1)
    values = rng.uniform(-1, 1, size=space.shape)
    beta = 0.7
    updated = kl_regularized_update(p_k, values, beta)
    mapped = reward_mapping(updated, p_k, beta)
    shift = values - mapped.values
    np.testing.assert_allclose(shift, shift[:, :1].repeat(4, axis=1), atol=1e-10)
    np.testing.assert_allclose(shift[:, 0], beta * log_partition(p_k, values, beta), atol=1e-10)


def test_reward_mapping_feeds_back_to_same_policy():
    """Test that tilting by the mapped reward reproduces the updated policy."""
    space = BanditSpace(n_contexts=2, n_responses=5)
    p_k = random_policy(space, 0.5, 3)
    updated = kl_regularized_update(p_k, make_rng(4).uniform(-1, 1, size=space.shape), 1.5)
    again = kl_regularized_update(p_k, reward_mapping(updated, p_k, 1.5), 1.5)
    np.testing.assert_allclose(again.probs, updated.probs, atol=1e-12)


def test_one_step_descent_and_kl_upper_bounds_hold():
    """Test the one-step descent inequality and the KL upper bound on random draws."""
    space = BanditSpace(n_contexts=2, n_responses=4)
    rng = make_rng(9)
    for seed in range(200):
        p_star = random_policy(space, 1.0, seed)
        p = random_policy(space, 1.0, seed + 5_000)
        r_max = float(rng.uniform(0.1, 2.0))
        reward = RewardTable(rng.uniform(-r_max, r_max, size=space.shape), r_max)
        beta = float(rng.uniform(0.2, 5.0))

        lhs, rhs = one_step_descent_check(p_star, p, reward, beta)
        assert lhs <= rhs + 1e-10
        kl_lhs, kl_rhs = kl_upper_check(p, reward, beta)
        assert np.all(kl_lhs <= kl_rhs + 1e-10)
