# Copyright (c) Microsoft. All rights reserved.

"""
Tabular value types shared by every module.

Tables are frozen dataclasses over read-only numpy arrays; they can be
shared between concurrent runs without copying.
"""

import math
from dataclasses import dataclass, field
from typing import Annotated, Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import log_softmax, softmax

from selfplay_ail.errors import DimensionError, DomainError, InvalidParameterError
from selfplay_ail.utils.constants import BOX_TOLERANCE, LOGIT_TOLERANCE, PROB_FLOOR, SUM_TOLERANCE

__all__ = [
    "BanditSpace",
    "ContextDistribution",
    "FloatArray",
    "PolicyTable",
    "RewardTable",
    "RngSeed",
    "as_array",
    "floor_probabilities",
    "make_rng",
]

FloatArray = NDArray[np.float64]

RngSeed = Annotated[int, Field(ge=0, lt=2**64, description="64-bit unsigned seed")]


def make_rng(seed: int) -> np.random.Generator:
    """
    Create the generator for a seed.

    Parameters
    ----------
    seed : int
        64-bit unsigned seed. Identical seeds yield identical streams.

    Returns
    -------
    numpy.random.Generator
        A PCG64 generator.
    """
    if not 0 <= seed < 2**64:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(seed)


def _frozen(values: ArrayLike) -> FloatArray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


def floor_probabilities(probs: FloatArray) -> FloatArray:
    """
    Clamp rows to at least ``PROB_FLOOR`` and renormalize.

    Rows already above the floor are returned unchanged (bit for bit).
    """
    if probs.min() >= PROB_FLOOR:
        return probs
    clamped = np.maximum(probs, PROB_FLOOR)
    return clamped / clamped.sum(axis=-1, keepdims=True)


class BanditSpace(BaseModel):
    """Finite context set and response set of a contextual bandit."""

    model_config = ConfigDict(frozen=True)

    n_contexts: int = Field(ge=1, description="Number of contexts |X|")
    n_responses: int = Field(ge=2, description="Number of responses |Y|")

    @property
    def shape(self) -> tuple[int, int]:
        """Shape of every table over this space."""
        return (self.n_contexts, self.n_responses)


@dataclass(frozen=True)
class ContextDistribution:
    """
    Prompt distribution rho over contexts.

    Attributes
    ----------
    probs : FloatArray
        Vector of length ``n_contexts``; non-negative, sums to one.
    """

    probs: FloatArray

    def __post_init__(self) -> None:
        probs = _frozen(self.probs)
        if probs.ndim != 1 or probs.size == 0:
            raise DimensionError(f"context distribution must be a non-empty vector, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or probs.min() < 0:
            raise InvalidParameterError("context probabilities must be finite and non-negative")
        if abs(math.fsum(probs) - 1.0) > SUM_TOLERANCE:
            raise InvalidParameterError(f"context probabilities sum to {math.fsum(probs)!r}, expected 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, n_contexts: int) -> "ContextDistribution":
        """Uniform distribution over ``n_contexts`` contexts."""
        return cls(np.full(n_contexts, 1.0 / n_contexts))

    @property
    def n_contexts(self) -> int:
        """Number of contexts."""
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class PolicyTable:
    """
    Row-stochastic policy table pi(y|x).

    Rows are validated, then clamped to the probability floor. When
    ``logits`` are supplied the probabilities must equal their row-wise
    softmax within ``LOGIT_TOLERANCE``.

    Attributes
    ----------
    probs : FloatArray
        Matrix ``[n_contexts, n_responses]`` of probabilities.
    logits : FloatArray or None
        Optional real parameters with ``probs == softmax(logits, axis=1)``.

    Examples
    --------
    >>> PolicyTable(np.array([[0.25, 0.75]])).n_responses
    2
    """

    probs: FloatArray
    logits: FloatArray | None = field(default=None)

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] == 0 or probs.shape[1] == 0:
            raise DimensionError(f"policy table must be a non-empty matrix, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or probs.min() < 0:
            raise InvalidParameterError("policy probabilities must be finite and non-negative")
        row_error = np.abs(probs.sum(axis=1) - 1.0).max()
        if row_error > SUM_TOLERANCE:
            raise InvalidParameterError(f"policy rows must sum to 1, worst row is off by {row_error:.3e}")
        probs = _frozen(floor_probabilities(probs))
        object.__setattr__(self, "probs", probs)

        if self.logits is not None:
            logits = _frozen(self.logits)
            if logits.shape != probs.shape:
                raise DimensionError(f"logits shape {logits.shape} does not match probs shape {probs.shape}")
            if not np.all(np.isfinite(logits)):
                raise InvalidParameterError("logits must be finite")
            if np.abs(softmax(logits, axis=1) - probs).max() > LOGIT_TOLERANCE:
                raise InvalidParameterError("probs must equal softmax(logits) row-wise")
            object.__setattr__(self, "logits", logits)

    @classmethod
    def from_logits(cls, logits: ArrayLike) -> "PolicyTable":
        """Build a policy from logits via row-wise softmax."""
        logits_array = np.asarray(logits, dtype=np.float64)
        return cls(softmax(logits_array, axis=1), logits=logits_array)

    @classmethod
    def uniform(cls, n_contexts: int, n_responses: int) -> "PolicyTable":
        """Uniform policy with zero logits."""
        return cls.from_logits(np.zeros((n_contexts, n_responses)))

    @property
    def shape(self) -> tuple[int, int]:
        """Table shape ``(n_contexts, n_responses)``."""
        return (int(self.probs.shape[0]), int(self.probs.shape[1]))

    @property
    def n_contexts(self) -> int:
        """Number of contexts."""
        return self.shape[0]

    @property
    def n_responses(self) -> int:
        """Number of responses."""
        return self.shape[1]

    def log_probs(self) -> FloatArray:
        """Log-probabilities; taken from the logits when present."""
        if self.logits is not None:
            return np.asarray(log_softmax(self.logits, axis=1), dtype=np.float64)
        return np.log(self.probs)

    def with_logits(self) -> "PolicyTable":
        """Return the same policy carrying logits (log-probabilities if none were stored)."""
        if self.logits is not None:
            return self
        return PolicyTable(self.probs, logits=np.log(self.probs))


@dataclass(frozen=True)
class RewardTable:
    """
    Bounded reward table r(x, y).

    Attributes
    ----------
    values : FloatArray
        Matrix ``[n_contexts, n_responses]``.
    r_max_bound : float
        Box radius; every entry satisfies ``|r| <= r_max_bound``.
    """

    values: FloatArray
    r_max_bound: float

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.ndim != 2:
            raise DimensionError(f"reward table must be a matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("reward values must be finite")
        bound = float(self.r_max_bound)
        if not bound > 0 or not math.isfinite(bound):
            raise InvalidParameterError(f"r_max_bound must be positive and finite, got {bound}")
        if values.size and np.abs(values).max() > bound * (1 + BOX_TOLERANCE) + BOX_TOLERANCE:
            raise DomainError(f"reward entries exceed the box [-{bound}, {bound}]")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "r_max_bound", bound)

    @classmethod
    def zeros(cls, shape: tuple[int, int], r_max_bound: float = 1.0) -> "RewardTable":
        """All-zero reward."""
        return cls(np.zeros(shape), r_max_bound)

    @classmethod
    def bounded(cls, values: ArrayLike) -> "RewardTable":
        """Wrap values with ``r_max_bound`` set to the realized maximum magnitude."""
        array = np.asarray(values, dtype=np.float64)
        realized = float(np.abs(array).max()) if array.size else 0.0
        return cls(array, realized if realized > 0 else PROB_FLOOR)

    @classmethod
    def projected(cls, values: ArrayLike, r_max: float) -> "RewardTable":
        """Clamp values entrywise onto ``[-r_max, r_max]``."""
        return cls(np.clip(np.asarray(values, dtype=np.float64), -r_max, r_max), r_max)

    @property
    def shape(self) -> tuple[int, int]:
        """Table shape."""
        return (int(self.values.shape[0]), int(self.values.shape[1]))

    def max_abs(self) -> float:
        """Largest entry magnitude."""
        return float(np.abs(self.values).max())


def as_array(table: Any) -> FloatArray:
    """Return the numeric matrix behind a table or array-like."""
    if isinstance(table, PolicyTable):
        return table.probs
    if isinstance(table, RewardTable):
        return table.values
    if isinstance(table, ContextDistribution):
        return table.probs
    return np.asarray(table, dtype=np.float64)
