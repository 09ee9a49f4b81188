# Copyright (c) Microsoft. All rights reserved.

"""Tabular contextual bandit: instances, sampling and divergences."""

from selfplay_ail.bandit.core import default_instance, expected_value, random_policy
from selfplay_ail.bandit.divergences import divergence, optimal_mixed_chi2_reward

__all__ = [
    "default_instance",
    "divergence",
    "expected_value",
    "optimal_mixed_chi2_reward",
    "random_policy",
]
