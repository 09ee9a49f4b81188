# Copyright (c) Microsoft. All rights reserved.

"""Reward and policy players of the self-play game."""

from selfplay_ail.players.policy import kl_regularized_update, reward_mapping
from selfplay_ail.players.reward import reward_step, sign_reward

__all__ = ["kl_regularized_update", "reward_mapping", "reward_step", "sign_reward"]
