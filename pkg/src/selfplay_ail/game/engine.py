# Copyright (c) Microsoft. All rights reserved.

"""
General self-play loop, game value and duality gap.

The policy player runs KL mirror descent, the reward player runs proximal
ascent. Convergence is measured by the duality gap of the uniformly
averaged iterates, evaluated exactly via closed-form best responses.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from selfplay_ail.bandit.core import check_same_shape, expected_value
from selfplay_ail.bandit.divergences import KL, divergence
from selfplay_ail.errors import ConvergedBelowToleranceError, InvalidParameterError
from selfplay_ail.models.game import BoxRegularizer, GameConfig, GameMode, MixedQuadraticRegularizer
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.players.policy import kl_regularized_update, reward_mapping
from selfplay_ail.players.reward import (
    bregman_divergence,
    regularized_best_response,
    reward_step,
    sign_reward,
)

__all__ = [
    "DualityGapReport",
    "IterateHistory",
    "HorizonSchedule",
    "averaged_gap",
    "duality_gap",
    "game_value",
    "rate_fit",
    "run_selfplay",
    "telescoping_check",
    "sqrt_horizon_schedule",
]

logger = logging.getLogger(__name__)

# Lower bound on the schedule's KL estimate when the reference already equals the expert.
_SCHEDULE_FLOOR = 1e-8


@dataclass(frozen=True)
class IterateHistory:
    """
    Logged iterates of a self-play run.

    Attributes
    ----------
    policies : list[PolicyTable]
        ``K + 1`` policies ``pi^1 .. pi^{K+1}``.
    rewards : list[RewardTable]
        ``K`` rewards fed to the policy step (``Delta r`` in mapped mode).
    game_values : list[float]
        ``J(pi^k, rewards[k])`` for ``k = 1 .. K``.
    kl_to_expert : list[float]
        ``E_rho KL(p* || pi^k)`` for every logged policy.
    player_rewards : list[RewardTable]
        Reward-player outputs ``r^k``; equal to ``rewards`` in unmapped mode.
    """

    policies: list[PolicyTable]
    rewards: list[RewardTable]
    game_values: list[float]
    kl_to_expert: list[float]
    player_rewards: list[RewardTable] = field(default_factory=list)

    def __post_init__(self) -> None:
        n_rewards = len(self.rewards)
        if len(self.policies) != n_rewards + 1:
            raise InvalidParameterError(f"expected {n_rewards + 1} policies, got {len(self.policies)}")
        if len(self.game_values) != n_rewards:
            raise InvalidParameterError(f"expected {n_rewards} game values, got {len(self.game_values)}")
        if len(self.kl_to_expert) != n_rewards + 1:
            raise InvalidParameterError(f"expected {n_rewards + 1} KL values, got {len(self.kl_to_expert)}")
        if any(value < 0 for value in self.kl_to_expert):
            raise InvalidParameterError("KL values must be non-negative")
        if not self.player_rewards:
            object.__setattr__(self, "player_rewards", list(self.rewards))

    @property
    def iterations(self) -> int:
        """Number of completed iterations K."""
        return len(self.rewards)


@dataclass(frozen=True)
class DualityGapReport:
    """
    Duality gap of the averaged iterates with run-measured rate constants.

    Attributes
    ----------
    gap : float
        ``max_r J(pi_bar, r) - min_pi J(pi, r_bar)``.
    avg_policy : PolicyTable
        ``pi_bar``, mean of ``pi^1 .. pi^K``.
    avg_reward : RewardTable
        ``r_bar``, mean of the K rewards.
    d_const : float
        Largest logged ``KL(p* || pi^k)`` (a proxy for D).
    b_const : float or None
        Largest ``D_f(r*, r^k) / R_max^2`` over ``{0} ∪ rewards`` (a proxy for B),
        ``None`` when no regularizer was supplied.
    bound_value : float
        ``(d_const + b_const) R_max^2 / sqrt(K)`` with the proxies.
    max_term : float
        ``J(pi_bar, sign_reward)``.
    min_term : float
        ``E_{p*} r_bar - E_rho max_y r_bar``.
    """

    gap: float
    avg_policy: PolicyTable
    avg_reward: RewardTable
    d_const: float
    b_const: float | None
    bound_value: float
    max_term: float
    min_term: float


@dataclass(frozen=True)
class HorizonSchedule:
    """Step sizes growing as sqrt(K), with the constant estimates they use."""

    beta: float
    zeta: float
    d_hat: float
    b_hat: float


def game_value(
    pi: PolicyTable | FloatArray,
    r: RewardTable | FloatArray,
    p_star: PolicyTable,
    rho: ContextDistribution,
) -> float:
    """
    Game value ``J(pi, r) = E_rho[E_{p*} r - E_pi r]``.

    ``pi`` may be a raw matrix so deterministic policies can be evaluated
    without the probability floor.
    """
    return expected_value(rho, p_star, r) - expected_value(rho, pi, r)


def run_selfplay(
    config: GameConfig,
    p_star: PolicyTable,
    p_ref: PolicyTable,
    rho: ContextDistribution,
) -> IterateHistory:
    """
    Run the general two-stage self-play loop.

    Parameters
    ----------
    config : GameConfig
        Iterations, temperatures and regularizer.
    p_star : PolicyTable
        Expert policy.
    p_ref : PolicyTable
        Reference policy, used as ``pi^1``.
    rho : ContextDistribution
        Prompt distribution.

    Returns
    -------
    IterateHistory
        All iterates of the run.

    Notes
    -----
    Starting from ``pi^1 = p_ref`` and ``r^0 = 0``, each iteration sets
    ``r^k`` with the reward player's proximal step against ``pi^k`` and then
    ``pi^{k+1} = kl_regularized_update(pi^k, r^k, beta)``. In mapped mode the
    policy consumes ``Delta r = beta log(pi^{k+1} / pi^k)`` instead, which
    differs from ``r^k`` by a per-context constant; the reward player keeps
    its own unmapped iterate as proximal center.
    """
    check_same_shape(p_star, p_ref)
    shape = p_star.shape
    policies = [p_ref]
    rewards: list[RewardTable] = []
    player_rewards: list[RewardTable] = []
    game_values: list[float] = []
    kl_values = [divergence(KL(), p_star, p_ref, rho)]
    r_prev = RewardTable.zeros(shape, config.r_max)

    for k in range(1, config.iterations + 1):
        p_k = policies[-1]
        r_k = reward_step(config, r_prev, p_star, p_k, rho)
        r_used = r_k
        if config.mode is GameMode.MAPPED_DELTA_R:
            r_used = reward_mapping(kl_regularized_update(p_k, r_k, config.beta), p_k, config.beta)
        p_next = kl_regularized_update(p_k, r_used, config.beta)

        value = game_value(p_k, r_used, p_star, rho)
        kl_next = divergence(KL(), p_star, p_next, rho)
        logger.debug("iteration %d: J=%.6g kl_expert=%.6g", k, value, kl_next)

        policies.append(p_next)
        rewards.append(r_used)
        player_rewards.append(r_k)
        game_values.append(value)
        kl_values.append(kl_next)
        r_prev = r_k

    return IterateHistory(
        policies=policies,
        rewards=rewards,
        game_values=game_values,
        kl_to_expert=kl_values,
        player_rewards=player_rewards,
    )


def averaged_gap(
    pi_bar: PolicyTable,
    r_bar: RewardTable | FloatArray,
    p_star: PolicyTable,
    rho: ContextDistribution,
    r_max: float,
) -> tuple[float, float, float]:
    """
    Duality gap at a given pair of averages.

    The max term uses the box best response ``sign_reward(p*, pi_bar)``; the
    min term uses the deterministic policy on ``argmax_y r_bar(x, y)`` with the
    lowest index winning ties.

    Returns
    -------
    tuple[float, float, float]
        ``(gap, max_term, min_term)``.
    """
    values = r_bar.values if isinstance(r_bar, RewardTable) else np.asarray(r_bar, dtype=np.float64)
    max_term = game_value(pi_bar, sign_reward(p_star, pi_bar, r_max), p_star, rho)
    best = np.zeros_like(values)
    best[np.arange(best.shape[0]), values.argmax(axis=1)] = 1.0
    min_term = game_value(best, values, p_star, rho)
    return max_term - min_term, max_term, min_term


def duality_gap(
    history: IterateHistory,
    p_star: PolicyTable,
    rho: ContextDistribution,
    r_max: float,
    regularizer: BoxRegularizer | MixedQuadraticRegularizer | None = None,
) -> DualityGapReport:
    """
    Duality gap of the averaged iterates, evaluated by :func:`averaged_gap`.

    With a regularizer the report also carries the proxy for ``B``.
    """
    n_iterations = history.iterations
    if n_iterations == 0:
        raise InvalidParameterError("duality gap needs at least one iteration")
    pi_bar = PolicyTable(np.mean([p.probs for p in history.policies[:n_iterations]], axis=0))
    r_bar_values = np.mean([r.values for r in history.rewards], axis=0)
    r_bar = RewardTable(r_bar_values, max(r.r_max_bound for r in history.rewards))

    gap, max_term, min_term = averaged_gap(pi_bar, r_bar, p_star, rho, r_max)

    d_const = max(history.kl_to_expert)
    b_const: float | None = None
    if regularizer is not None:
        r_star = regularized_best_response(regularizer, p_star, pi_bar, r_max).values
        candidates = [np.zeros_like(r_star)] + [r.values for r in history.player_rewards]
        b_const = max(bregman_divergence(r_star, c) for c in candidates) / r_max**2
    bound_value = (d_const + (b_const or 0.0)) * r_max**2 / math.sqrt(n_iterations)

    return DualityGapReport(
        gap=gap,
        avg_policy=pi_bar,
        avg_reward=r_bar,
        d_const=d_const,
        b_const=b_const,
        bound_value=bound_value,
        max_term=max_term,
        min_term=min_term,
    )


def rate_fit(gaps: Sequence[tuple[int, float]]) -> tuple[float, float]:
    """
    Fit ``gap = constant * K^(-exponent)`` by least squares in log-log space.

    Parameters
    ----------
    gaps : sequence of (K, gap)
        Measured duality gaps per horizon.

    Returns
    -------
    tuple[float, float]
        ``(exponent, constant)``.

    Raises
    ------
    InvalidParameterError
        Fewer than three distinct horizons.
    ConvergedBelowToleranceError
        A gap is zero or negative.
    """
    horizons = np.array([k for k, _ in gaps], dtype=np.float64)
    values = np.array([g for _, g in gaps], dtype=np.float64)
    if np.unique(horizons).size < 3:
        raise InvalidParameterError("rate fit needs at least three distinct horizons")
    if np.any(horizons <= 0):
        raise InvalidParameterError("horizons must be positive")
    if np.any(values <= 0):
        raise ConvergedBelowToleranceError("duality gap reached zero; the run converged below tolerance")
    slope, intercept = np.polyfit(np.log(horizons), np.log(values), 1)
    return float(-slope), float(math.exp(intercept))


def sqrt_horizon_schedule(
    iterations: int,
    p_star: PolicyTable,
    p_ref: PolicyTable,
    rho: ContextDistribution,
    r_max: float,
) -> HorizonSchedule:
    """
    Step sizes ``beta = sqrt(K) / D`` and ``zeta = sqrt(K) / (B R_max^2)``.

    ``D`` is estimated by ``KL(p* || p_ref)``. ``B`` is the largest
    ``D_f(r*, r) / R_max^2`` over the box, taking ``r*`` as the sign reward
    against the reference policy, which is
    ``sum_cells (|r*| + R_max)^2 / (2 R_max^2)``.
    """
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be positive, got {iterations}")
    if not r_max > 0:
        raise InvalidParameterError(f"r_max must be positive, got {r_max}")
    d_hat = max(divergence(KL(), p_star, p_ref, rho), _SCHEDULE_FLOOR)
    r_star = sign_reward(p_star, p_ref, r_max).values
    b_hat = math.fsum(((np.abs(r_star) + r_max) ** 2).ravel()) / (2 * r_max**2)
    root = math.sqrt(iterations)
    return HorizonSchedule(beta=root / d_hat, zeta=root / (b_hat * r_max**2), d_hat=d_hat, b_hat=b_hat)


def telescoping_check(history: IterateHistory) -> tuple[float, float]:
    """
    Sum of per-step KL decreases against the end-to-end decrease.

    Returns
    -------
    tuple[float, float]
        ``(sum_k KL_k - KL_{k+1}, KL_1 - KL_{K+1})``.
    """
    kl = history.kl_to_expert
    steps = math.fsum(kl[k] - kl[k + 1] for k in range(len(kl) - 1))
    return steps, kl[0] - kl[-1]
