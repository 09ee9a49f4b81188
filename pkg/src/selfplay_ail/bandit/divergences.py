# Copyright (c) Microsoft. All rights reserved.

"""
Statistical distances between policy tables and their variational forms.

The mixed chi-square divergence is reported as the value of its variational
problem under the mixed quadratic penalty, i.e.
``sum_y (p* - p)^2 / (4c (alpha p* + (1 - alpha) p))`` per context. At
``alpha = 1/2`` this is ``(1/(2c)) sum_y (p* - p)^2 / (p* + p)``, which lies in
``[0, 1/c]``.
"""

import math
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import rel_entr

from selfplay_ail.bandit.core import check_same_shape, expected_value
from selfplay_ail.errors import DimensionError, InvalidParameterError
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.utils.constants import DEFAULT_GRID_STEP, PROB_FLOOR

__all__ = [
    "Chi2",
    "DivergenceKind",
    "KL",
    "TV",
    "MixedChi2",
    "brute_force_variational_max",
    "divergence",
    "divergence_per_context",
    "kl_per_context",
    "optimal_mixed_chi2_reward",
    "tv_per_context",
    "variational_value",
]


class TV(BaseModel):
    """Total variation distance ``1/2 ||p* - p||_1``."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["tv"] = "tv"


class KL(BaseModel):
    """Kullback-Leibler divergence ``KL(p* || p)``."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["kl"] = "kl"


class Chi2(BaseModel):
    """Pearson chi-square divergence ``sum (p* - p)^2 / p``."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["chi2"] = "chi2"


class MixedChi2(BaseModel):
    """Chi-square divergence against the mixture ``alpha p* + (1 - alpha) p``, scaled by ``c``."""

    model_config = ConfigDict(frozen=True)
    kind: Literal["mixed_chi2"] = "mixed_chi2"
    alpha: float = Field(default=0.5, gt=0, lt=1, description="Mixture weight on the expert")
    c: float = Field(gt=0, description="Quadratic penalty weight of the reward player")


DivergenceKind = Annotated[TV | KL | Chi2 | MixedChi2, Field(discriminator="kind")]


def kl_per_context(p_star: PolicyTable | FloatArray, p: PolicyTable | FloatArray) -> FloatArray:
    """Per-context ``KL(p_star(.|x) || p(.|x))``."""
    a = p_star.probs if isinstance(p_star, PolicyTable) else p_star
    b = p.probs if isinstance(p, PolicyTable) else p
    check_same_shape(a, b)
    return np.asarray(rel_entr(a, b).sum(axis=1), dtype=np.float64)


def tv_per_context(p_star: PolicyTable | FloatArray, p: PolicyTable | FloatArray) -> FloatArray:
    """Per-context total variation distance."""
    a = p_star.probs if isinstance(p_star, PolicyTable) else p_star
    b = p.probs if isinstance(p, PolicyTable) else p
    check_same_shape(a, b)
    return np.asarray(0.5 * np.abs(a - b).sum(axis=1), dtype=np.float64)


def divergence_per_context(kind: TV | KL | Chi2 | MixedChi2, p_star: PolicyTable, p: PolicyTable) -> FloatArray:
    """Per-context divergence of ``kind`` between the expert and ``p``."""
    check_same_shape(p_star, p)
    a, b = p_star.probs, p.probs
    match kind:
        case TV():
            return tv_per_context(a, b)
        case KL():
            return kl_per_context(a, b)
        case Chi2():
            return np.asarray(((a - b) ** 2 / b).sum(axis=1), dtype=np.float64)
        case MixedChi2(alpha=alpha, c=c):
            mixture = alpha * a + (1 - alpha) * b
            return np.asarray(((a - b) ** 2 / (4 * c * mixture)).sum(axis=1), dtype=np.float64)
    raise InvalidParameterError(f"unknown divergence kind {kind!r}")  # pragma: no cover


def divergence(
    kind: TV | KL | Chi2 | MixedChi2,
    p_star: PolicyTable,
    p: PolicyTable,
    rho: ContextDistribution,
) -> float:
    """
    Expected per-context divergence under the prompt distribution.

    Parameters
    ----------
    kind : DivergenceKind
        Which distance to compute.
    p_star : PolicyTable
        Expert policy (first argument of the divergence).
    p : PolicyTable
        Compared policy.
    rho : ContextDistribution
        Prompt distribution used for the outer expectation.

    Returns
    -------
    float
        ``E_rho[D(p_star(.|x), p(.|x))]``.
    """
    per_context = divergence_per_context(kind, p_star, p)
    if per_context.shape[0] != rho.n_contexts:
        raise DimensionError(f"rho has {rho.n_contexts} contexts, tables have {per_context.shape[0]}")
    return math.fsum(rho.probs * per_context)


def optimal_mixed_chi2_reward(p_star: PolicyTable, p: PolicyTable, c: float, alpha: float = 0.5) -> RewardTable:
    """
    Closed-form maximizer of the mixed chi-square variational problem.

    ``r*(x, y) = (p* - p) / (2c (alpha p* + (1 - alpha) p))``. Cells where
    both densities sit at the probability floor are set to zero. At
    ``alpha = 1/2`` every entry lies in ``[-1/c, 1/c]``.
    """
    if not c > 0:
        raise InvalidParameterError(f"c must be positive, got {c}")
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    check_same_shape(p_star, p)
    a, b = p_star.probs, p.probs
    values = (a - b) / (2 * c * (alpha * a + (1 - alpha) * b))
    values = np.where((a <= 2 * PROB_FLOOR) & (b <= 2 * PROB_FLOOR), 0.0, values)
    bound = 1.0 / (2 * c * min(alpha, 1 - alpha))
    return RewardTable.projected(values, bound)


def variational_value(
    r: RewardTable,
    p_star: PolicyTable,
    p: PolicyTable,
    rho: ContextDistribution,
    c: float,
    alpha: float = 0.5,
) -> float:
    """
    Variational objective of the mixed chi-square divergence at ``r``.

    Returns ``E_{p*} r - E_p r - c alpha E_{p*} r^2 - c (1 - alpha) E_p r^2``,
    all expectations taken under ``rho``.
    """
    if not 0 <= alpha <= 1:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    squared = r.values**2
    return math.fsum([
        expected_value(rho, p_star, r),
        -expected_value(rho, p, r),
        -c * alpha * expected_value(rho, p_star, squared),
        -c * (1 - alpha) * expected_value(rho, p, squared),
    ])


def brute_force_variational_max(
    p_star: PolicyTable,
    p: PolicyTable,
    rho: ContextDistribution,
    c: float,
    grid_step: float = DEFAULT_GRID_STEP,
) -> tuple[RewardTable, float]:
    """
    Grid-search oracle for the ``alpha = 1/2`` variational problem.

    The objective ``a (r - (c/2) r^2) - b (r + (c/2) r^2)`` with
    ``a = rho p*`` and ``b = rho p`` is separable across cells, so each cell
    is scanned independently over ``[-1/c, 1/c]`` with spacing ``grid_step``.

    Returns
    -------
    tuple[RewardTable, float]
        Maximizing reward table and the maximal objective value.
    """
    if not c > 0:
        raise InvalidParameterError(f"c must be positive, got {c}")
    if not 0 < grid_step <= 1.0 / c:
        raise InvalidParameterError(f"grid_step must lie in (0, 1/c], got {grid_step}")
    check_same_shape(p_star, p)
    n_points = math.ceil((2.0 / c) / grid_step) + 1
    grid = np.linspace(-1.0 / c, 1.0 / c, n_points)

    a = (rho.probs[:, None] * p_star.probs).ravel()
    b = (rho.probs[:, None] * p.probs).ravel()
    objective = a[:, None] * (grid - 0.5 * c * grid**2) - b[:, None] * (grid + 0.5 * c * grid**2)
    best = objective.argmax(axis=1)
    cell_values = objective[np.arange(a.size), best]
    rewards = grid[best]

    # Contexts with zero prompt mass have a flat objective; report r = 0 there.
    flat = (a + b) == 0
    rewards = np.where(flat, 0.0, rewards)
    cell_values = np.where(flat, 0.0, cell_values)

    table = RewardTable.projected(rewards.reshape(p.shape), 1.0 / c)
    return table, math.fsum(cell_values)
