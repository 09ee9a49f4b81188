# Copyright (c) Microsoft. All rights reserved.

"""Configuration and data types of the chi-square self-play objective."""

from dataclasses import dataclass, field
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

from selfplay_ail.errors import DimensionError, InvalidParameterError
from selfplay_ail.models.tables import BanditSpace, FloatArray

__all__ = [
    "ExactSampling",
    "MonteCarloSampling",
    "SampledDataset",
    "SamplingMode",
    "SpifConfig",
    "SpifLossSpec",
]


class SpifLossSpec(BaseModel):
    """
    Hyperparameters of the least-squares objective.

    The square terms pull ``Delta r = beta log(pi / pi^k)`` towards
    ``r_max_target = 1/(2 c alpha)`` on expert data and towards
    ``r_min_target = -1/(2 c (1 - alpha))`` on model data. At ``alpha = 1/2``
    the targets are ``+-1/c``.

    Examples
    --------
    >>> SpifLossSpec(beta=1.0, c=2.0).r_max_target
    0.5
    """

    model_config = ConfigDict(frozen=True)

    beta: float = Field(default=1.0, gt=0, description="Policy KL temperature")
    c: float = Field(default=2.0, gt=0, description="Reward penalty weight; bounds |Delta r| by 1/c")
    alpha: float = Field(default=0.5, gt=0, lt=1, description="Expert weight of the mixture")
    zeta: float = Field(default=1e-3, ge=0, description="Weight of the log-ratio proximal term")
    regularizer_form: Literal["union", "expert"] = Field(
        default="union",
        description=(
            "'union' averages (log pi/pi^k)^2 over expert and model data; "
            "'expert' uses beta^2 (log pi/pi^k)^2 under the expert only"
        ),
    )

    @computed_field  # type: ignore[prop-decorator]
    @property
    def r_max_target(self) -> float:
        """Regression target on expert responses."""
        return 1.0 / (2 * self.c * self.alpha)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def r_min_target(self) -> float:
        """Regression target on model responses."""
        return -1.0 / (2 * self.c * (1 - self.alpha))


class ExactSampling(BaseModel):
    """Train on exact expectations."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["exact"] = "exact"


class MonteCarloSampling(BaseModel):
    """
    Train on sampled datasets.

    Each iteration draws ``n`` expert pairs and ``n`` model pairs. With
    ``history_window > 1`` the model data of the most recent
    ``history_window`` iterations are pooled.
    """

    model_config = ConfigDict(frozen=True)
    kind: Literal["monte_carlo"] = "monte_carlo"
    n: int = Field(ge=1, description="Pairs drawn per dataset")
    seed: int = Field(ge=0, lt=2**64, description="Root seed of the per-iteration streams")
    history_window: int = Field(default=1, ge=1, description="Model datasets pooled per iteration")


SamplingMode = Annotated[ExactSampling | MonteCarloSampling, Field(discriminator="kind")]


class SpifConfig(BaseModel):
    """Outer loop settings of the chi-square self-play trainer."""

    model_config = ConfigDict(frozen=True)

    iterations: int = Field(ge=1, description="Self-play iterations K")
    loss: SpifLossSpec = Field(default_factory=SpifLossSpec)


@dataclass(frozen=True)
class SampledDataset:
    """
    A dataset of (context, response) pairs.

    Attributes
    ----------
    pairs : numpy.ndarray
        Integer array ``(n, 2)`` of context and response indices.
    space : BanditSpace
        Space the indices refer to.
    source : {"expert", "model"}
        Who generated the responses.
    iteration : int or None
        Self-play iteration of the generating model.
    weights : FloatArray or None
        Optional non-negative per-pair weights; uniform when omitted.
    """

    pairs: np.ndarray
    space: BanditSpace
    source: Literal["expert", "model"] = "model"
    iteration: int | None = None
    weights: FloatArray | None = field(default=None)

    def __post_init__(self) -> None:
        pairs = np.array(self.pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.shape[0] == 0:
            raise InvalidParameterError("dataset must not be empty")
        if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.space.n_contexts:
            raise InvalidParameterError("context index out of range")
        if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.space.n_responses:
            raise InvalidParameterError("response index out of range")
        pairs.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        if self.weights is not None:
            weights = np.array(self.weights, dtype=np.float64)
            if weights.shape != (pairs.shape[0],):
                raise DimensionError(f"expected {pairs.shape[0]} weights, got shape {weights.shape}")
            if weights.min() < 0 or weights.sum() <= 0:
                raise InvalidParameterError("weights must be non-negative with positive total")
            weights.setflags(write=False)
            object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        """Number of pairs."""
        return int(self.pairs.shape[0])

    def empirical_measure(self) -> FloatArray:
        """Normalized weight of every ``(x, y)`` cell."""
        weights = np.ones(len(self)) if self.weights is None else self.weights
        measure = np.zeros(self.space.shape)
        np.add.at(measure, (self.pairs[:, 0], self.pairs[:, 1]), weights)
        return measure / weights.sum()

    def total_weight(self) -> float:
        """Sum of pair weights (the pair count when unweighted)."""
        return float(len(self) if self.weights is None else self.weights.sum())

    def merged(self, other: "SampledDataset") -> "SampledDataset":
        """Union of two datasets over the same space."""
        if other.space != self.space:
            raise DimensionError("datasets live on different spaces")
        if (self.weights is None) != (other.weights is None):
            raise InvalidParameterError("cannot merge weighted and unweighted datasets")
        weights = None
        if self.weights is not None and other.weights is not None:
            weights = np.concatenate([self.weights, other.weights])
        return SampledDataset(
            pairs=np.concatenate([self.pairs, other.pairs]),
            space=self.space,
            source=self.source,
            iteration=self.iteration,
            weights=weights,
        )
