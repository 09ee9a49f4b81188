# Copyright (c) Microsoft. All rights reserved.

"""
Preference-based self-play baselines: SPPO, INPO and iterative DPO.

Win rates ``w^k(x, y) = E_{y' ~ pi^k} P(y > y' | x)`` are computed by exact
enumeration. SPPO and INPO minimize least-squares objectives on logits;
iterative DPO uses its closed-form tilt.
"""

import logging
import math
from collections.abc import Callable, Sequence

import numpy as np

from selfplay_ail.bandit.core import check_same_shape
from selfplay_ail.bandit.divergences import kl_per_context
from selfplay_ail.errors import DimensionError, DomainError, InvalidParameterError, UnsupportedOracleError
from selfplay_ail.game.descent import (
    LossEvaluation,
    TrainingHistory,
    descend_logits,
    project_to_logits,
    train_by_descent,
)
from selfplay_ail.models.preferences import InpoConfig, PreferenceOracle
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.players.policy import kl_regularized_update

__all__ = [
    "SPPO_C",
    "chi2_ail_sppo_gradient",
    "chi2_ail_sppo_objective",
    "contraction_check_dpo",
    "expert_oracle",
    "inpo_displayed_gradient",
    "inpo_displayed_loss",
    "inpo_gradient",
    "inpo_loss",
    "inpo_step",
    "inpo_train",
    "iterative_dpo_iterates",
    "iterative_dpo_step",
    "sppo_gradient",
    "sppo_loss",
    "sppo_step",
    "sppo_train",
    "win_rate",
]

logger = logging.getLogger(__name__)

# Penalty weight at which the SPPO objective matches the chi-square AIL reward objective.
SPPO_C = 1.0


def _check_oracle(oracle: PreferenceOracle, p_k: PolicyTable) -> None:
    if oracle.shape != p_k.shape:
        raise DimensionError(f"oracle space {oracle.shape} does not match policy shape {p_k.shape}")


def win_rate(p_k: PolicyTable, oracle: PreferenceOracle) -> FloatArray:
    """Exact ``w^k(x, y) = sum_{y'} P(y > y' | x) pi^k(y' | x)``."""
    _check_oracle(oracle, p_k)
    return np.asarray(np.einsum("xab,xb->xa", oracle.preferences, p_k.probs), dtype=np.float64)


def expert_oracle(p_star: PolicyTable) -> PreferenceOracle:
    """
    Bradley-Terry oracle whose latent reward is ``log p*``, centered per context.

    With this oracle ``p* ∝ exp(r*)``, so the preference baselines chase the
    same expert as the imitation methods.
    """
    log_probs = p_star.log_probs()
    return PreferenceOracle.bradley_terry(RewardTable.bounded(log_probs - log_probs.mean(axis=1, keepdims=True)))


# SPPO


def _sppo_evaluation(
    pi: PolicyTable, p_k: PolicyTable, wins: FloatArray, rho: ContextDistribution, beta: float
) -> LossEvaluation:
    log_ratio = pi.log_probs() - p_k.log_probs()
    residual = log_ratio - (wins - 0.5) / beta
    weights = rho.probs[:, None] * p_k.probs
    loss = math.fsum((weights * residual**2).ravel())
    gradient = project_to_logits(pi, 2 * weights * residual)
    return LossEvaluation(loss, gradient, float(np.abs(beta * log_ratio).max()))


def sppo_loss(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, beta: float
) -> float:
    """``E_{x ~ rho, y ~ pi^k}[log(pi / pi^k) - (w^k - 1/2) / beta]^2``."""
    check_same_shape(pi, p_k)
    return _sppo_evaluation(pi, p_k, win_rate(p_k, oracle), rho, beta).loss


def sppo_gradient(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, beta: float
) -> FloatArray:
    """Logit gradient of :func:`sppo_loss`."""
    check_same_shape(pi, p_k)
    return _sppo_evaluation(pi.with_logits(), p_k, win_rate(p_k, oracle), rho, beta).gradient


def _chi2_ail_parts(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, beta: float, c: float
) -> tuple[float, FloatArray]:
    check_same_shape(pi, p_k)
    dr = beta * (pi.log_probs() - p_k.log_probs())
    advantage = 2 * win_rate(p_k, oracle) - 1
    weights = rho.probs[:, None] * p_k.probs
    value = math.fsum((weights * (advantage * dr - c * dr**2)).ravel())
    dlogp = weights * (advantage * beta - 2 * c * beta * dr)
    return value, project_to_logits(pi, dlogp)


def chi2_ail_sppo_objective(
    pi: PolicyTable,
    p_k: PolicyTable,
    oracle: PreferenceOracle,
    rho: ContextDistribution,
    beta: float,
    c: float = SPPO_C,
) -> float:
    """
    Chi-square regularized reward objective evaluated at ``Delta r = beta log(pi / pi^k)``.

    ``E_{rho, pi^k}[(2 w^k - 1) Delta r] - c E_{rho, pi^k}[Delta r^2]``, where
    ``2 w^k(y) - 1 = E_{y' ~ pi^k}[P(y > y') - P(y' > y)]`` is the preference
    advantage of ``y`` over the current model. The SPPO loss equals
    ``-objective / (c beta^2)`` plus a constant when ``c = 1``.
    """
    return _chi2_ail_parts(pi, p_k, oracle, rho, beta, c)[0]


def chi2_ail_sppo_gradient(
    pi: PolicyTable,
    p_k: PolicyTable,
    oracle: PreferenceOracle,
    rho: ContextDistribution,
    beta: float,
    c: float = SPPO_C,
) -> FloatArray:
    """Logit gradient of :func:`chi2_ail_sppo_objective`."""
    return _chi2_ail_parts(pi.with_logits(), p_k, oracle, rho, beta, c)[1]


def sppo_step(
    p_k: PolicyTable,
    oracle: PreferenceOracle,
    rho: ContextDistribution,
    beta: float,
    inner_steps: int,
    lr: float,
    iteration: int = 1,
) -> PolicyTable:
    """
    One SPPO iteration: gradient descent on :func:`sppo_loss` from ``pi^k``.

    Raises
    ------
    TrainingDivergenceError
        If the loss or the logits become non-finite.
    """
    wins = win_rate(p_k, oracle)
    policy, _ = descend_logits(
        p_k, lambda pi: _sppo_evaluation(pi, p_k, wins, rho, beta), inner_steps, lr, iteration=iteration
    )
    return policy


def sppo_train(
    p_star: PolicyTable,
    p_ref: PolicyTable,
    oracle: PreferenceOracle,
    rho: ContextDistribution,
    beta: float,
    iterations: int,
    inner_steps: int,
    lr: float,
) -> TrainingHistory:
    """Iterate :func:`sppo_step` from ``p_ref``, logging KL to ``p_star``."""
    _check_oracle(oracle, p_ref)

    def make_objective(k: int, p_k: PolicyTable) -> Callable[[PolicyTable], LossEvaluation]:
        wins = win_rate(p_k, oracle)
        return lambda pi: _sppo_evaluation(pi, p_k, wins, rho, beta)

    return train_by_descent(make_objective, p_star, p_ref, rho, beta, iterations, inner_steps, lr, label="sppo")


# INPO


def _inpo_anchor(pi: PolicyTable, p_k: PolicyTable, config: InpoConfig) -> FloatArray:
    """``a(y) = log pi - (tau/eta) log pi_ref - ((eta - tau)/eta) log pi^k``."""
    ratio = config.tau / config.eta
    return np.asarray(
        pi.log_probs() - ratio * config.p_ref.log_probs() - (1 - ratio) * p_k.log_probs(),
        dtype=np.float64,
    )


def _inpo_evaluation(
    pi: PolicyTable, p_k: PolicyTable, wins: FloatArray, rho: ContextDistribution, config: InpoConfig
) -> LossEvaluation:
    anchor = _inpo_anchor(pi, p_k, config)
    residual = (anchor[:, :, None] - anchor[:, None, :]) - (wins[:, :, None] - wins[:, None, :]) / config.eta
    pair_weights = rho.probs[:, None, None] * p_k.probs[:, :, None] * p_k.probs[:, None, :]
    loss = math.fsum((pair_weights * residual**2).ravel())
    dlogp = 4 * rho.probs[:, None] * p_k.probs * np.einsum("xb,xab->xa", p_k.probs, residual)
    dr = config.eta * (pi.log_probs() - p_k.log_probs())
    return LossEvaluation(loss, project_to_logits(pi, dlogp), float(np.abs(dr).max()))


def _check_inpo(p_k: PolicyTable, config: InpoConfig) -> None:
    check_same_shape(p_k, config.p_ref)


def inpo_loss(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, config: InpoConfig
) -> float:
    """
    Paired INPO loss.

    ``E_{x, y, y' ~ pi^k}[(a(y) - a(y')) - (w^k(y) - w^k(y')) / eta]^2`` with
    ``a = log pi - (tau/eta) log pi_ref - ((eta - tau)/eta) log pi^k``.
    """
    _check_inpo(p_k, config)
    check_same_shape(pi, p_k)
    return _inpo_evaluation(pi, p_k, win_rate(p_k, oracle), rho, config).loss


def inpo_gradient(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, config: InpoConfig
) -> FloatArray:
    """Logit gradient of :func:`inpo_loss`."""
    _check_inpo(p_k, config)
    check_same_shape(pi, p_k)
    return _inpo_evaluation(pi.with_logits(), p_k, win_rate(p_k, oracle), rho, config).gradient


def _inpo_displayed_parts(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, config: InpoConfig
) -> tuple[float, FloatArray]:
    _check_inpo(p_k, config)
    _check_oracle(oracle, p_k)
    check_same_shape(pi, p_k)
    anchor = _inpo_anchor(pi, p_k, config)
    margin = anchor[:, :, None] - anchor[:, None, :]
    half = 1.0 / (2 * config.eta)
    prefs = oracle.preferences
    pair_weights = rho.probs[:, None, None] * p_k.probs[:, :, None] * p_k.probs[:, None, :]
    # y wins with probability P(y > y'), otherwise the roles swap and the margin flips sign.
    per_pair = prefs * (margin - half) ** 2 + (1 - prefs) * (-margin - half) ** 2
    loss = math.fsum((pair_weights * per_pair).ravel())
    slope = 2 * margin + 2 * half * (1 - 2 * prefs)
    dlogp = 2 * rho.probs[:, None] * p_k.probs * np.einsum("xb,xab->xa", p_k.probs, slope)
    return loss, project_to_logits(pi, dlogp)


def inpo_displayed_loss(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, config: InpoConfig
) -> float:
    """
    INPO loss with sampled winners.

    Each pair ``(y, y') ~ pi^k x pi^k`` is ordered as winner and loser
    according to the oracle, and the winner-minus-loser margin of ``a`` is
    regressed on ``1/(2 eta)``. It differs from :func:`inpo_loss` by a
    constant that does not depend on ``pi``.
    """
    return _inpo_displayed_parts(pi, p_k, oracle, rho, config)[0]


def inpo_displayed_gradient(
    pi: PolicyTable, p_k: PolicyTable, oracle: PreferenceOracle, rho: ContextDistribution, config: InpoConfig
) -> FloatArray:
    """Logit gradient of :func:`inpo_displayed_loss`."""
    return _inpo_displayed_parts(pi.with_logits(), p_k, oracle, rho, config)[1]


def inpo_step(
    p_k: PolicyTable,
    oracle: PreferenceOracle,
    rho: ContextDistribution,
    config: InpoConfig,
    inner_steps: int,
    lr: float,
    iteration: int = 1,
) -> PolicyTable:
    """
    One INPO iteration: gradient descent on :func:`inpo_loss` from ``pi^k``.

    Raises
    ------
    TrainingDivergenceError
        If the loss or the logits become non-finite.
    """
    _check_inpo(p_k, config)
    wins = win_rate(p_k, oracle)
    policy, _ = descend_logits(
        p_k, lambda pi: _inpo_evaluation(pi, p_k, wins, rho, config), inner_steps, lr, iteration=iteration
    )
    return policy


def inpo_train(
    p_star: PolicyTable,
    oracle: PreferenceOracle,
    rho: ContextDistribution,
    config: InpoConfig,
    iterations: int,
    inner_steps: int,
    lr: float,
) -> TrainingHistory:
    """Iterate :func:`inpo_step` from ``config.p_ref``."""
    _check_inpo(p_star, config)
    _check_oracle(oracle, p_star)

    def make_objective(k: int, p_k: PolicyTable) -> Callable[[PolicyTable], LossEvaluation]:
        wins = win_rate(p_k, oracle)
        return lambda pi: _inpo_evaluation(pi, p_k, wins, rho, config)

    return train_by_descent(
        make_objective, p_star, config.p_ref, rho, config.eta, iterations, inner_steps, lr, label="inpo"
    )


# Iterative DPO


def iterative_dpo_step(p_k: PolicyTable, oracle: PreferenceOracle, beta: float, y_ref: int = 0) -> PolicyTable:
    """
    Exact iterative DPO update.

    ``pi^{k+1}(y) ∝ pi^k(y) (P(y > y_ref) / (1 - P(y > y_ref)))^(1/beta)``,
    with the odds read from the oracle's preference table. Under
    Bradley-Terry the odds ratio is ``exp(r*(y) - r*(y_ref))``, so the
    normalized update does not depend on ``y_ref``.

    Raises
    ------
    UnsupportedOracleError
        If the oracle is not Bradley-Terry.
    DomainError
        If a preference against ``y_ref`` is exactly 0 or 1.
    """
    if oracle.kind != "bradley_terry":
        raise UnsupportedOracleError("iterative DPO needs a Bradley-Terry oracle")
    _check_oracle(oracle, p_k)
    if not 0 <= y_ref < p_k.n_responses:
        raise InvalidParameterError(f"y_ref {y_ref} outside [0, {p_k.n_responses})")
    wins = oracle.preferences[:, :, y_ref]
    # P(y_ref > y) is stored as the complement of P(y > y_ref).
    losses = oracle.preferences[:, y_ref, :]
    if wins.min() <= 0 or losses.min() <= 0:
        raise DomainError(f"a preference against response {y_ref} is degenerate; the odds are not finite")
    return kl_regularized_update(p_k, np.log(wins) - np.log(losses), beta)


def iterative_dpo_iterates(
    p_ref: PolicyTable, oracle: PreferenceOracle, beta: float, iterations: int, y_ref: int = 0
) -> list[PolicyTable]:
    """Policies ``pi^0 .. pi^K`` of the iterated DPO update."""
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be positive, got {iterations}")
    policies = [p_ref]
    for _ in range(iterations):
        policies.append(iterative_dpo_step(policies[-1], oracle, beta, y_ref))
    return policies


def contraction_check_dpo(
    history: Sequence[PolicyTable],
    p_star: PolicyTable,
    rho: ContextDistribution | None = None,
) -> list[tuple[int, float, float]]:
    """
    Per-iteration sides of ``KL(p* || pi^{k+1}) <= KL(p* || pi^k) - KL(pi^{k+1} || pi^k)``.

    Returns
    -------
    list of (k, lhs, rhs)
        One entry per step ``pi^k -> pi^{k+1}``, averaged under ``rho``
        (uniform when omitted).
    """
    rho = rho or ContextDistribution.uniform(p_star.n_contexts)
    checks: list[tuple[int, float, float]] = []
    for k in range(len(history) - 1):
        current, following = history[k], history[k + 1]
        lhs = math.fsum(rho.probs * kl_per_context(p_star, following))
        rhs = math.fsum(rho.probs * kl_per_context(p_star, current)) - math.fsum(
            rho.probs * kl_per_context(following, current)
        )
        checks.append((k, lhs, rhs))
    return checks
