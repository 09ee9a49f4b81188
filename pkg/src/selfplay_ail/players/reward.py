# Copyright (c) Microsoft. All rights reserved.

"""
The reward (max) player.

The reward player maximizes ``E_rho[sigma(E_{p*} r - E_{pi^k} r)] - psi(r) - zeta D_f(r, r_prev)``.
Its updates are proximal ascent steps with the Euclidean generator
``D_f(r, r') = 1/2 ||r - r'||^2``; the gain is linearized through the link at
``r_prev`` when the link is not the identity.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from scipy.special import expit

from selfplay_ail.bandit.core import check_same_shape, expected_value
from selfplay_ail.bandit.divergences import optimal_mixed_chi2_reward
from selfplay_ail.errors import DimensionError, DomainError, InvalidParameterError
from selfplay_ail.models.game import (
    BoxRegularizer,
    GameConfig,
    LinkFunction,
    MixedQuadraticRegularizer,
    RegularizerSpec,
)
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.utils.constants import BOX_TOLERANCE

__all__ = [
    "bregman_divergence",
    "context_gaps",
    "link_derivative",
    "link_value",
    "mixed_quadratic_reward_step",
    "omd_regret_check",
    "omd_reward_step",
    "psi_value",
    "regularized_best_response",
    "reward_objective",
    "reward_step",
    "sign_reward",
]

logger = logging.getLogger(__name__)


def link_value(link: LinkFunction, t: FloatArray) -> FloatArray:
    """
    Evaluate the link ``sigma`` entrywise.

    The logistic link ``-log(1 + exp(-t))`` is evaluated as
    ``min(t, 0) - log1p(exp(-|t|))``, which never overflows.
    """
    t = np.asarray(t, dtype=np.float64)
    if link is LinkFunction.IDENTITY:
        return t
    return np.minimum(t, 0.0) - np.log1p(np.exp(-np.abs(t)))


def link_derivative(link: LinkFunction, t: FloatArray) -> FloatArray:
    """Derivative ``sigma'(t)``; the logistic link gives ``1 / (1 + exp(t))``."""
    t = np.asarray(t, dtype=np.float64)
    if link is LinkFunction.IDENTITY:
        return np.ones_like(t)
    return np.asarray(expit(-t), dtype=np.float64)


def context_gaps(r: RewardTable, p_star: PolicyTable, p_k: PolicyTable) -> FloatArray:
    """Per-context gap ``E_{p*(.|x)} r(x, .) - E_{p_k(.|x)} r(x, .)``."""
    check_same_shape(r, p_star, p_k)
    return np.asarray(((p_star.probs - p_k.probs) * r.values).sum(axis=1), dtype=np.float64)


def psi_value(
    psi: BoxRegularizer | MixedQuadraticRegularizer,
    r: RewardTable,
    p_star: PolicyTable,
    p_k: PolicyTable,
    rho: ContextDistribution,
) -> float:
    """
    Value of the convex regularizer ``psi`` at ``r``.

    Raises
    ------
    DomainError
        If ``psi`` is a box and ``r`` leaves it.
    """
    if isinstance(psi, BoxRegularizer):
        if r.max_abs() > psi.r_max * (1 + BOX_TOLERANCE) + BOX_TOLERANCE:
            raise DomainError(f"reward leaves the box [-{psi.r_max}, {psi.r_max}]")
        return 0.0
    squared = r.values**2
    return psi.c * (
        psi.alpha * expected_value(rho, p_star, squared) + (1 - psi.alpha) * expected_value(rho, p_k, squared)
    )


def bregman_divergence(r: RewardTable | FloatArray, r_prev: RewardTable | FloatArray) -> float:
    """Euclidean Bregman divergence ``1/2 ||r - r_prev||^2``."""
    a = r.values if isinstance(r, RewardTable) else np.asarray(r)
    b = r_prev.values if isinstance(r_prev, RewardTable) else np.asarray(r_prev)
    if a.shape != b.shape:
        raise DimensionError(f"reward shapes disagree: {a.shape} vs {b.shape}")
    return 0.5 * math.fsum(((a - b) ** 2).ravel())


def reward_objective(
    r: RewardTable,
    p_star: PolicyTable,
    p_k: PolicyTable,
    rho: ContextDistribution,
    link: LinkFunction,
    reg: RegularizerSpec,
    r_prev: RewardTable,
) -> float:
    """
    Regularized reward-player objective.

    Parameters
    ----------
    r : RewardTable
        Candidate reward.
    p_star, p_k : PolicyTable
        Expert and current policy.
    rho : ContextDistribution
        Prompt distribution.
    link : LinkFunction
        Link applied to each context's gap before the outer expectation.
    reg : RegularizerSpec
        ``psi`` and proximal weight ``zeta``.
    r_prev : RewardTable
        Previous reward iterate (proximal center).

    Returns
    -------
    float
        ``E_rho[sigma(gap_x(r))] - psi(r) - zeta D_f(r, r_prev)``.
    """
    check_same_shape(r, p_star, p_k, r_prev)
    gains = link_value(link, context_gaps(r, p_star, p_k))
    linked = math.fsum(rho.probs * gains)
    penalty = psi_value(reg.psi, r, p_star, p_k, rho)
    proximal = reg.bregman_weight * bregman_divergence(r, r_prev) if reg.bregman_weight else 0.0
    return linked - penalty - proximal


def _gain_weights(
    link: LinkFunction, r_prev: RewardTable, p_star: PolicyTable, p_k: PolicyTable, rho: ContextDistribution
) -> FloatArray:
    slope = link_derivative(link, context_gaps(r_prev, p_star, p_k))
    return np.asarray(rho.probs * slope, dtype=np.float64)


def omd_reward_step(
    r_prev: RewardTable,
    p_star: PolicyTable,
    p_k: PolicyTable,
    rho: ContextDistribution,
    zeta: float,
    r_max: float,
    weights: FloatArray | None = None,
) -> RewardTable:
    """
    Projected mirror ascent step of the reward player under the box.

    Returns ``clip(r_prev + (1/zeta) w(x) (p* - p_k), -r_max, r_max)`` where
    ``w = rho`` for the identity link. This is the exact maximizer of the
    linear gain minus ``zeta/2 ||r - r_prev||^2`` over the box.
    """
    if not zeta > 0:
        raise InvalidParameterError(f"zeta must be positive for the mirror ascent step, got {zeta}")
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    check_same_shape(r_prev, p_star, p_k)
    w = rho.probs if weights is None else weights
    step = w[:, None] * (p_star.probs - p_k.probs) / zeta
    return RewardTable.projected(r_prev.values + step, r_max)


def mixed_quadratic_reward_step(
    r_prev: RewardTable,
    p_star: PolicyTable,
    p_k: PolicyTable,
    rho: ContextDistribution,
    psi: MixedQuadraticRegularizer,
    zeta: float,
    r_max: float,
    weights: FloatArray | None = None,
) -> RewardTable:
    """
    Exact proximal maximizer under the mixed quadratic penalty.

    Each cell maximizes
    ``w (p* - p_k) r - c rho (alpha p* + (1 - alpha) p_k) r^2 - zeta/2 (r - r_prev)^2``,
    whose argmax is available in closed form. With ``zeta = 0`` and the
    identity link this is the optimal mixed chi-square reward. Cells with a
    vanishing curvature keep ``r_prev``.
    """
    if zeta < 0:
        raise InvalidParameterError(f"zeta must be non-negative, got {zeta}")
    check_same_shape(r_prev, p_star, p_k)
    w = rho.probs if weights is None else weights
    a, b = p_star.probs, p_k.probs
    numerator = w[:, None] * (a - b) + zeta * r_prev.values
    curvature = 2 * psi.c * rho.probs[:, None] * (psi.alpha * a + (1 - psi.alpha) * b) + zeta
    values = np.divide(numerator, curvature, out=np.array(r_prev.values), where=curvature > 0)
    return RewardTable.projected(values, r_max)


def reward_step(
    config: GameConfig,
    r_prev: RewardTable,
    p_star: PolicyTable,
    p_k: PolicyTable,
    rho: ContextDistribution,
) -> RewardTable:
    """Reward player's update for one iteration of the general loop."""
    weights = None
    if config.link is not LinkFunction.IDENTITY:
        weights = _gain_weights(config.link, r_prev, p_star, p_k, rho)
    psi = config.regularizer.psi
    if isinstance(psi, BoxRegularizer):
        return omd_reward_step(r_prev, p_star, p_k, rho, config.zeta, config.r_max, weights)
    return mixed_quadratic_reward_step(r_prev, p_star, p_k, rho, psi, config.zeta, config.r_max, weights)


def sign_reward(p_star: PolicyTable, p_bar: PolicyTable, r_max: float) -> RewardTable:
    """
    Box best response ``r_max * sign(p* - p_bar)`` with ``sign(0) = 0``.

    It maximizes ``J(p_bar, .)`` over the box and attains
    ``2 r_max E_rho TV(p_bar, p*)``.
    """
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    check_same_shape(p_star, p_bar)
    return RewardTable(r_max * np.sign(p_star.probs - p_bar.probs), r_max)


def regularized_best_response(
    psi: BoxRegularizer | MixedQuadraticRegularizer,
    p_star: PolicyTable,
    p_bar: PolicyTable,
    r_max: float,
) -> RewardTable:
    """Reward maximizing the unlinked objective against ``p_bar`` for the given ``psi``."""
    if isinstance(psi, BoxRegularizer):
        return sign_reward(p_star, p_bar, r_max)
    closed_form = optimal_mixed_chi2_reward(p_star, p_bar, psi.c, psi.alpha)
    return RewardTable.projected(closed_form.values, r_max)


def omd_regret_check(
    policies: Sequence[PolicyTable],
    rewards: Sequence[RewardTable],
    p_star: PolicyTable,
    rho: ContextDistribution,
    zeta: float,
    r_max: float,
) -> tuple[float, float]:
    """
    Regret of the reward iterates against the box best response to the average policy.

    With loss vectors ``g^k = rho (pi^k - p*)`` and comparator
    ``u = sign_reward(p*, mean(pi^k), r_max)``, returns
    ``lhs = sum_k <r^k - u, g^k>`` and
    ``rhs = zeta D_f(u, 0) + K / (2 zeta) max_k ||g^k||^2``.

    ``policies[k]`` must be the policy the k-th reward responded to.
    """
    if not zeta > 0:
        raise InvalidParameterError(f"zeta must be positive, got {zeta}")
    if len(rewards) == 0 or len(policies) < len(rewards):
        raise InvalidParameterError("need at least one reward and one policy per reward")
    n_iterations = len(rewards)
    played = policies[:n_iterations]
    p_bar = PolicyTable(np.mean([p.probs for p in played], axis=0))
    comparator = sign_reward(p_star, p_bar, r_max).values

    regret_terms: list[float] = []
    max_sq_norm = 0.0
    for pi_k, r_k in zip(played, rewards, strict=True):
        g = rho.probs[:, None] * (pi_k.probs - p_star.probs)
        regret_terms.append(math.fsum(((r_k.values - comparator) * g).ravel()))
        max_sq_norm = max(max_sq_norm, math.fsum((g**2).ravel()))
    lhs = math.fsum(regret_terms)
    rhs = zeta * bregman_divergence(comparator, np.zeros_like(comparator)) + n_iterations / (2 * zeta) * max_sq_norm
    logger.debug("omd regret lhs=%.6g rhs=%.6g", lhs, rhs)
    return lhs, rhs
