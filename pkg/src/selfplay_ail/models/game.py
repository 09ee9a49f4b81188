# Copyright (c) Microsoft. All rights reserved.

"""Configuration models for the two-player self-play game."""

from enum import StrEnum
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

__all__ = [
    "BoxRegularizer",
    "GameConfig",
    "GameMode",
    "LinkFunction",
    "MixedQuadraticRegularizer",
    "RegularizerSpec",
]


class LinkFunction(StrEnum):
    """Link applied per context to the expert-minus-policy reward gap."""

    IDENTITY = "identity"
    LOGISTIC = "logistic"


class GameMode(StrEnum):
    """Whether the policy step consumes the reward or its log-ratio mapping."""

    UNMAPPED = "unmapped"
    MAPPED_DELTA_R = "mapped_delta_r"


class BoxRegularizer(BaseModel):
    """Indicator of the box ``[-r_max, r_max]`` (total variation regime)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["box"] = "box"
    r_max: float = Field(gt=0, description="Box radius R_max")


class MixedQuadraticRegularizer(BaseModel):
    """
    Mixed quadratic penalty ``c alpha E_{p*} r^2 + c (1 - alpha) E_{pi} r^2``.

    Under this penalty the game minimizes the mixed chi-square divergence and
    the optimal reward is bounded by ``1/(2c min(alpha, 1 - alpha))``.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["mixed_quadratic"] = "mixed_quadratic"
    c: float = Field(gt=0, description="Penalty weight c")
    alpha: float = Field(default=0.5, gt=0, lt=1, description="Weight of the expert measure")


class RegularizerSpec(BaseModel):
    """
    Reward-player regularizer ``psi(r) + zeta D_f(r, r_prev)``.

    ``D_f`` is the Euclidean generator ``1/2 ||r - r'||^2`` over all cells.
    """

    model_config = ConfigDict(frozen=True)

    psi: Annotated[BoxRegularizer | MixedQuadraticRegularizer, Field(discriminator="kind")]
    bregman_weight: float = Field(default=0.0, ge=0, description="Proximal weight zeta")


class GameConfig(BaseModel):
    """
    Hyperparameters of the general self-play loop.

    Examples
    --------
    >>> GameConfig(
    ...     iterations=8,
    ...     beta=2.0,
    ...     r_max=1.0,
    ...     regularizer=RegularizerSpec(psi=BoxRegularizer(r_max=1.0), bregman_weight=2.0),
    ... ).zeta
    2.0
    """

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(ge=1, description="Number of self-play iterations K")
    beta: float = Field(gt=0, description="Policy KL temperature beta (eta = 1/beta)")
    r_max: float = Field(gt=0, description="Reward box radius R_max")
    link: LinkFunction = Field(default=LinkFunction.IDENTITY, description="Link sigma")
    regularizer: RegularizerSpec = Field(description="Reward regularizer psi and proximal weight zeta")
    mode: GameMode = Field(default=GameMode.UNMAPPED, description="Reward fed to the policy step")

    @property
    def zeta(self) -> float:
        """Proximal weight of the reward player."""
        return self.regularizer.bregman_weight

    @model_validator(mode="after")
    def _check_regularizer(self) -> "GameConfig":
        psi = self.regularizer.psi
        if isinstance(psi, BoxRegularizer):
            if self.zeta <= 0:
                raise ValueError("the box regularizer needs a positive proximal weight zeta")
            if psi.r_max != self.r_max:
                raise ValueError(f"box radius {psi.r_max} differs from r_max {self.r_max}")
        return self
