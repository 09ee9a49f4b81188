# Copyright (c) Microsoft. All rights reserved.

"""Preference oracles and the configuration of preference-based baselines."""

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from selfplay_ail.errors import DimensionError, DomainError
from selfplay_ail.models.tables import FloatArray, PolicyTable, RewardTable
from selfplay_ail.utils.constants import SUM_TOLERANCE

__all__ = ["InpoConfig", "PreferenceOracle"]


@dataclass(frozen=True)
class PreferenceOracle:
    """
    Pairwise preference probabilities ``P(y > y' | x)``.

    Attributes
    ----------
    kind : {"bradley_terry", "general"}
        Bradley-Terry oracles are generated by a latent reward; general
        oracles are arbitrary tables.
    preferences : FloatArray
        Array ``[n_contexts, n_responses, n_responses]`` with
        ``preferences[x, y, y'] = P(y > y' | x)``.
    latent_reward : RewardTable or None
        The reward ``r*`` of a Bradley-Terry oracle.

    Examples
    --------
    >>> oracle = PreferenceOracle.bradley_terry(np.array([[0.0, 0.0]]))
    >>> float(oracle.preferences[0, 0, 1])
    0.5
    """

    kind: Literal["bradley_terry", "general"]
    preferences: FloatArray
    latent_reward: RewardTable | None = field(default=None)

    def __post_init__(self) -> None:
        table = np.array(self.preferences, dtype=np.float64)
        if table.ndim != 3 or table.shape[1] != table.shape[2]:
            raise DimensionError(f"preferences must have shape [X, Y, Y], got {table.shape}")
        if not np.all(np.isfinite(table)) or table.min() < 0 or table.max() > 1:
            raise DomainError("preference probabilities must lie in [0, 1]")
        if np.abs(table + table.transpose(0, 2, 1) - 1.0).max() > SUM_TOLERANCE:
            raise DomainError("preferences must satisfy P(y > y') + P(y' > y) = 1")
        if self.kind == "bradley_terry":
            if self.latent_reward is None:
                raise DomainError("a Bradley-Terry oracle needs its latent reward")
            if self.latent_reward.shape != table.shape[:2]:
                raise DimensionError("latent reward shape does not match the preference table")
        table.setflags(write=False)
        object.__setattr__(self, "preferences", table)

    @classmethod
    def bradley_terry(cls, reward: RewardTable | ArrayLike) -> "PreferenceOracle":
        """Oracle with ``P(y > y' | x) = logistic(r*(x, y) - r*(x, y'))``."""
        latent = reward if isinstance(reward, RewardTable) else RewardTable.bounded(reward)
        margins = latent.values[:, :, None] - latent.values[:, None, :]
        table = expit(margins)
        # Keep the smaller probability of each pair as computed and set the larger one to
        # its complement, so the pair sums to 1 and extreme odds stay accurate.
        swapped = table.transpose(0, 2, 1)
        table = np.where(table <= swapped, table, 1.0 - swapped)
        table[:, np.arange(table.shape[1]), np.arange(table.shape[1])] = 0.5
        return cls(kind="bradley_terry", preferences=table, latent_reward=latent)

    @classmethod
    def general(cls, preferences: ArrayLike) -> "PreferenceOracle":
        """Oracle backed by an explicit preference table."""
        return cls(kind="general", preferences=np.asarray(preferences, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        """``(n_contexts, n_responses)`` of the underlying space."""
        return (int(self.preferences.shape[0]), int(self.preferences.shape[1]))


class InpoConfig(BaseModel):
    """
    Temperatures of the INPO step.

    ``eta`` scales the log-ratio against the current iterate, ``tau`` the
    pull towards the reference policy.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    eta: float = Field(gt=0, description="Inverse step size eta")
    tau: float = Field(gt=0, description="Reference regularization tau, at most eta")
    p_ref: PolicyTable = Field(description="Reference policy pi_ref")

    @model_validator(mode="after")
    def _check_tau(self) -> "InpoConfig":
        if self.tau > self.eta:
            raise ValueError(f"tau ({self.tau}) must not exceed eta ({self.eta})")
        return self
