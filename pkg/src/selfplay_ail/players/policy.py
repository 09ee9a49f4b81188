# Copyright (c) Microsoft. All rights reserved.

"""
The policy (min) player: KL-regularized mirror descent and the reward mapping.

The temperature ``beta`` is the inverse of the mirror-descent step size,
``eta = 1 / beta``.
"""

import math

import numpy as np
from scipy.special import logsumexp

from selfplay_ail.bandit.core import check_same_shape
from selfplay_ail.bandit.divergences import kl_per_context
from selfplay_ail.errors import InvalidParameterError, NumericalDegeneracyError
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable

__all__ = [
    "kl_regularized_update",
    "kl_upper_check",
    "log_partition",
    "one_step_descent_check",
    "reward_mapping",
]


def _check_beta(beta: float) -> None:
    if not beta > 0 or not math.isfinite(beta):
        raise InvalidParameterError(f"beta must be positive and finite, got {beta}")


def _tilted_logits(p_k: PolicyTable, r: RewardTable | FloatArray, beta: float) -> FloatArray:
    _check_beta(beta)
    values = r.values if isinstance(r, RewardTable) else np.asarray(r, dtype=np.float64)
    check_same_shape(p_k, values)
    return p_k.log_probs() + values / beta


def kl_regularized_update(p_k: PolicyTable, r: RewardTable | FloatArray, beta: float) -> PolicyTable:
    """
    Closed-form policy step ``pi^{k+1} ∝ pi^k exp(r / beta)``.

    Parameters
    ----------
    p_k : PolicyTable
        Current policy.
    r : RewardTable
        Reward to tilt by.
    beta : float
        KL temperature.

    Returns
    -------
    PolicyTable
        Updated policy carrying normalized log-probabilities as logits.

    Raises
    ------
    NumericalDegeneracyError
        If the tilted row is not finite.
    """
    tilted = _tilted_logits(p_k, r, beta)
    if not np.all(np.isfinite(tilted)):
        raise NumericalDegeneracyError("tilted logits are not finite")
    log_z = logsumexp(tilted, axis=1, keepdims=True)
    if not np.all(np.isfinite(log_z)):
        raise NumericalDegeneracyError("row normalizer underflowed or overflowed")
    return PolicyTable.from_logits(tilted - log_z)


def log_partition(p_k: PolicyTable, r: RewardTable | FloatArray, beta: float) -> FloatArray:
    """Per-context ``log sum_y pi^k(y|x) exp(r(x, y) / beta)``."""
    return np.asarray(logsumexp(_tilted_logits(p_k, r, beta), axis=1), dtype=np.float64)


def reward_mapping(pi: PolicyTable, p_k: PolicyTable, beta: float) -> RewardTable:
    """
    Partition-free reward ``Delta r = beta (log pi - log pi^k)``.

    ``r_max_bound`` is set to the realized largest magnitude.
    """
    _check_beta(beta)
    check_same_shape(pi, p_k)
    return RewardTable.bounded(beta * (pi.log_probs() - p_k.log_probs()))


def one_step_descent_check(
    p_star: PolicyTable,
    p: PolicyTable,
    r: RewardTable,
    beta: float,
    rho: ContextDistribution | None = None,
) -> tuple[float, float]:
    """
    Both sides of the one-step descent inequality, averaged under ``rho``.

    With ``eta = 1/beta`` and ``p' = kl_regularized_update(p, r, beta)``, per context
    ``<r, p* - p> <= eta R^2 / 2 + (KL(p* || p) - KL(p* || p')) / eta`` where
    ``R = max_y |r(x, y)|``.

    Returns
    -------
    tuple[float, float]
        ``(lhs, rhs)``; the inequality is ``lhs <= rhs``.
    """
    rho = rho or ContextDistribution.uniform(p.n_contexts)
    check_same_shape(p_star, p, r)
    eta = 1.0 / beta
    p_next = kl_regularized_update(p, r, beta)
    inner = ((p_star.probs - p.probs) * r.values).sum(axis=1)
    radius = np.abs(r.values).max(axis=1)
    descent = kl_per_context(p_star, p) - kl_per_context(p_star, p_next)
    rhs = eta * radius**2 / 2 + descent / eta
    return math.fsum(rho.probs * inner), math.fsum(rho.probs * rhs)


def kl_upper_check(p: PolicyTable, r: RewardTable, beta: float) -> tuple[FloatArray, FloatArray]:
    """
    Per-context sides of ``KL(p' || p) <= ||r(x, .)||_inf^2 / (2 beta^2)``.

    Returns
    -------
    tuple[FloatArray, FloatArray]
        ``(lhs, rhs)`` vectors over contexts.
    """
    p_next = kl_regularized_update(p, r, beta)
    lhs = kl_per_context(p_next, p)
    rhs = np.abs(r.values).max(axis=1) ** 2 / (2 * beta**2)
    return lhs, rhs
