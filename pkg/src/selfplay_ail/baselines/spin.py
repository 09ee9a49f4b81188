# Copyright (c) Microsoft. All rights reserved.

"""
Self-play fine-tuning (SPIN) in its logistic and linear forms.

The logistic form is trained by gradient descent on logits, which yields the
unbounded ``Delta r`` traces. The exact form tilts ``pi^k`` geometrically
towards the expert and contracts ``KL(p* || pi^k)`` by ``1 - 1/beta`` per
iteration.
"""

import logging
import math
import warnings
from collections.abc import Callable, Sequence

import numpy as np
from scipy.special import expit

from selfplay_ail.bandit.core import check_same_shape
from selfplay_ail.bandit.divergences import KL, divergence
from selfplay_ail.errors import ContractionRegimeWarning, DimensionError, InvalidParameterError
from selfplay_ail.game.descent import LossEvaluation, TrainingHistory, project_to_logits, train_by_descent
from selfplay_ail.game.engine import IterateHistory, game_value
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.players.policy import kl_regularized_update
from selfplay_ail.players.reward import sign_reward

__all__ = [
    "contraction_check_spin",
    "linear_spin_run",
    "linear_spin_update",
    "spin_exact_iterates",
    "spin_exact_update",
    "spin_logistic_gradient",
    "spin_logistic_loss",
    "spin_train",
]

logger = logging.getLogger(__name__)


def _check_beta(beta: float) -> None:
    if not beta > 0 or not math.isfinite(beta):
        raise InvalidParameterError(f"beta must be positive and finite, got {beta}")


def _logistic_evaluation(
    pi: PolicyTable,
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    beta: float,
) -> LossEvaluation:
    dr = beta * (pi.log_probs() - p_k.log_probs())
    # margins[x, y, y'] = Delta r(x, y) - Delta r(x, y'), y from the expert and y' from pi^k
    margins = dr[:, :, None] - dr[:, None, :]
    pair_weights = rho.probs[:, None, None] * p_star.probs[:, :, None] * p_k.probs[:, None, :]
    loss = math.fsum((pair_weights * np.logaddexp(0.0, -margins)).ravel())

    slopes = pair_weights * expit(-margins)
    d_dr = slopes.sum(axis=1) - slopes.sum(axis=2)
    return LossEvaluation(loss, project_to_logits(pi, beta * d_dr), float(np.abs(dr).max()))


def spin_logistic_loss(
    pi: PolicyTable,
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    beta: float,
) -> float:
    """
    Exact SPIN logistic loss.

    ``E_{x ~ rho, y ~ p*, y' ~ pi^k} log(1 + exp(-(Delta r(x, y) - Delta r(x, y'))))``
    with ``Delta r = beta log(pi / pi^k)``. It equals ``log 2`` at ``pi = pi^k``.
    """
    _check_beta(beta)
    check_same_shape(pi, p_k, p_star)
    return _logistic_evaluation(pi, p_k, p_star, rho, beta).loss


def spin_logistic_gradient(
    pi: PolicyTable,
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    beta: float,
) -> FloatArray:
    """Gradient of :func:`spin_logistic_loss` with respect to the logits of ``pi``."""
    _check_beta(beta)
    check_same_shape(pi, p_k, p_star)
    return _logistic_evaluation(pi.with_logits(), p_k, p_star, rho, beta).gradient


def spin_train(
    p_star: PolicyTable,
    p_ref: PolicyTable,
    rho: ContextDistribution,
    beta: float,
    iterations: int,
    inner_steps: int,
    lr: float,
) -> TrainingHistory:
    """
    Train SPIN by gradient descent on the logistic loss.

    Parameters
    ----------
    p_star : PolicyTable
        Expert policy.
    p_ref : PolicyTable
        Initial policy.
    rho : ContextDistribution
        Prompt distribution.
    beta : float
        Temperature of the log-ratio reward.
    iterations : int
        Self-play iterations.
    inner_steps : int
        Gradient steps per iteration.
    lr : float
        Step size on logits.

    Returns
    -------
    TrainingHistory
        Iterates with per-step loss, gradient norm and ``max |Delta r|``.
    """
    _check_beta(beta)
    check_same_shape(p_star, p_ref)

    def make_objective(k: int, p_k: PolicyTable) -> Callable[[PolicyTable], LossEvaluation]:
        return lambda pi: _logistic_evaluation(pi, p_k, p_star, rho, beta)

    return train_by_descent(make_objective, p_star, p_ref, rho, beta, iterations, inner_steps, lr, label="spin")


def spin_exact_update(p_k: PolicyTable, p_star: PolicyTable, beta: float) -> PolicyTable:
    """
    Exact SPIN update ``pi^{k+1} ∝ pi^k (p* / pi^k)^(1/beta)``.

    ``beta = 1`` lands on the expert in one step. For ``beta < 1`` the update
    overshoots and a :class:`ContractionRegimeWarning` is issued.

    Examples
    --------
    >>> p_k = PolicyTable(np.array([[0.5, 0.5]]))
    >>> p_star = PolicyTable(np.array([[0.9, 0.1]]))
    >>> np.round(spin_exact_update(p_k, p_star, 2.0).probs, 6)
    array([[0.75, 0.25]])
    """
    _check_beta(beta)
    if beta < 1:
        message = f"beta={beta} < 1: the exact SPIN update is not a KL contraction"
        logger.warning(message)
        warnings.warn(message, ContractionRegimeWarning, stacklevel=2)
    check_same_shape(p_k, p_star)
    return kl_regularized_update(p_k, p_star.log_probs() - p_k.log_probs(), beta)


def spin_exact_iterates(p_ref: PolicyTable, p_star: PolicyTable, beta: float, iterations: int) -> list[PolicyTable]:
    """Policies ``pi^0 .. pi^K`` of the iterated exact update, starting at ``p_ref``."""
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be positive, got {iterations}")
    policies = [p_ref]
    for _ in range(iterations):
        policies.append(spin_exact_update(policies[-1], p_star, beta))
    return policies


def linear_spin_update(
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    beta: float,
    r_max: float,
) -> PolicyTable:
    """
    One round of linear SPIN: the box best response followed by the policy tilt.

    The reward is ``r_max sign(p* - pi^k)``, which attains
    ``2 r_max E_rho TV(pi^k, p*)``; the policy then moves by
    :func:`kl_regularized_update`.
    """
    check_same_shape(p_k, p_star)
    if rho.n_contexts != p_k.n_contexts:
        raise DimensionError(f"rho has {rho.n_contexts} contexts, policies have {p_k.n_contexts}")
    return kl_regularized_update(p_k, sign_reward(p_star, p_k, r_max), beta)


def linear_spin_run(
    p_star: PolicyTable,
    p_ref: PolicyTable,
    rho: ContextDistribution,
    beta: float,
    r_max: float,
    iterations: int,
) -> IterateHistory:
    """
    Iterate :func:`linear_spin_update` from ``p_ref``.

    The logged rewards are the sign rewards, so ``game_values[k]`` equals
    ``2 r_max E_rho TV(pi^k, p*)``.
    """
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be positive, got {iterations}")
    policies = [p_ref]
    rewards: list[RewardTable] = []
    for _ in range(iterations):
        p_k = policies[-1]
        reward = sign_reward(p_star, p_k, r_max)
        rewards.append(reward)
        policies.append(linear_spin_update(p_k, p_star, rho, beta, r_max))
    return IterateHistory(
        policies=policies,
        rewards=rewards,
        game_values=[game_value(p, r, p_star, rho) for p, r in zip(policies, rewards, strict=False)],
        kl_to_expert=[divergence(KL(), p_star, p, rho) for p in policies],
    )


def contraction_check_spin(
    history: Sequence[PolicyTable],
    p_star: PolicyTable,
    beta: float,
    rho: ContextDistribution | None = None,
) -> list[tuple[int, float, float]]:
    """
    Per-iteration sides of ``KL(p* || pi^{k+1}) <= (1 - 1/beta) KL(p* || pi^k)``.

    Parameters
    ----------
    history : sequence of PolicyTable
        Iterates of :func:`spin_exact_update`, starting with ``pi^0``.
    p_star : PolicyTable
        Expert policy.
    beta : float
        Temperature the iterates were produced with.
    rho : ContextDistribution, optional
        Weights of the contexts; uniform when omitted.

    Returns
    -------
    list of (k, lhs, rhs)
        One entry per step ``pi^k -> pi^{k+1}``.
    """
    _check_beta(beta)
    rho = rho or ContextDistribution.uniform(p_star.n_contexts)
    factor = 1.0 - 1.0 / beta
    kl = [divergence(KL(), p_star, p, rho) for p in history]
    return [(k, kl[k + 1], factor * kl[k]) for k in range(len(kl) - 1)]
