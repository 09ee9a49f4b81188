# Copyright (c) Microsoft. All rights reserved.

"""Gradient descent on policy logits, shared by every loss-based trainer."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from selfplay_ail.bandit.divergences import KL, divergence
from selfplay_ail.errors import InvalidParameterError, TrainingDivergenceError
from selfplay_ail.game.engine import IterateHistory, game_value
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.players.policy import reward_mapping

__all__ = [
    "LossEvaluation",
    "StepRecord",
    "TrainingHistory",
    "descend_logits",
    "project_to_logits",
    "train_by_descent",
]

logger = logging.getLogger(__name__)


class LossEvaluation(NamedTuple):
    """Loss value, logit gradient and largest ``|Delta r|`` at one point."""

    loss: float
    gradient: FloatArray
    max_abs_dr: float


@dataclass(frozen=True)
class StepRecord:
    """One inner gradient step."""

    iteration: int
    step: int
    loss: float
    grad_inf_norm: float
    max_abs_dr: float


@dataclass(frozen=True)
class TrainingHistory:
    """
    Iterates of a loss-based self-play trainer.

    Attributes
    ----------
    policies : list[PolicyTable]
        ``pi^1 .. pi^{K+1}``.
    reward_maps : list[RewardTable]
        ``Delta r^k = beta log(pi^{k+1} / pi^k)`` realized by each iteration.
    losses : list[float]
        Loss at the last inner step of each iteration.
    grad_norms : list[float]
        Logit-gradient infinity norm at the last inner step of each iteration.
    steps : list[StepRecord]
        Every inner step, in order.
    kl_to_expert : list[float]
        ``E_rho KL(p* || pi^k)`` per policy.
    """

    policies: list[PolicyTable]
    reward_maps: list[RewardTable]
    losses: list[float]
    grad_norms: list[float]
    steps: list[StepRecord]
    kl_to_expert: list[float]

    @property
    def iterations(self) -> int:
        """Number of completed iterations."""
        return len(self.reward_maps)

    @classmethod
    def from_policies(
        cls,
        policies: list[PolicyTable],
        p_star: PolicyTable,
        rho: ContextDistribution,
        beta: float,
    ) -> "TrainingHistory":
        """
        History of a closed-form update with no inner optimization.

        Losses and gradient norms are recorded as zero.
        """
        if len(policies) < 2:
            raise InvalidParameterError("need at least two policies")
        maps = [reward_mapping(b, a, beta) for a, b in zip(policies[:-1], policies[1:], strict=True)]
        return cls(
            policies=list(policies),
            reward_maps=maps,
            losses=[0.0] * len(maps),
            grad_norms=[0.0] * len(maps),
            steps=[],
            kl_to_expert=[divergence(KL(), p_star, p, rho) for p in policies],
        )

    def max_abs_dr(self) -> float:
        """Largest ``|Delta r|`` over all logged steps and realized maps."""
        logged = [s.max_abs_dr for s in self.steps] + [r.max_abs() for r in self.reward_maps]
        return max(logged, default=0.0)

    def to_iterate_history(self, p_star: PolicyTable, rho: ContextDistribution) -> IterateHistory:
        """View the run as a game history with ``Delta r^k`` as the reward iterates."""
        values = [game_value(p, r, p_star, rho) for p, r in zip(self.policies, self.reward_maps, strict=False)]
        return IterateHistory(
            policies=list(self.policies),
            rewards=list(self.reward_maps),
            game_values=values,
            kl_to_expert=list(self.kl_to_expert),
        )


def project_to_logits(policy: PolicyTable, dlogp: FloatArray) -> FloatArray:
    """
    Chain a gradient w.r.t. log-probabilities through the row softmax.

    ``d/dtheta(x, y') = G(x, y') - pi(y'|x) sum_y G(x, y)``.
    """
    probs = np.exp(policy.log_probs())
    return np.asarray(dlogp - probs * dlogp.sum(axis=1, keepdims=True), dtype=np.float64)


def descend_logits(
    start: PolicyTable,
    objective: Callable[[PolicyTable], LossEvaluation],
    inner_steps: int,
    lr: float,
    iteration: int,
) -> tuple[PolicyTable, list[StepRecord]]:
    """
    Plain gradient descent on logits warm-started at ``start``.

    Parameters
    ----------
    start : PolicyTable
        Initial policy; its log-probabilities are used when it carries no logits.
    objective : callable
        Maps a policy with logits to its :class:`LossEvaluation`.
    inner_steps : int
        Number of descent steps.
    lr : float
        Constant step size.
    iteration : int
        Self-play iteration, used for records and error messages.

    Returns
    -------
    tuple[PolicyTable, list[StepRecord]]
        Final policy and one record per step.

    Raises
    ------
    TrainingDivergenceError
        If the loss, gradient or logits become non-finite.
    """
    if inner_steps < 1:
        raise InvalidParameterError(f"inner_steps must be positive, got {inner_steps}")
    if not lr > 0:
        raise InvalidParameterError(f"lr must be positive, got {lr}")
    logits = np.array(start.with_logits().logits, dtype=np.float64)
    records: list[StepRecord] = []
    for step in range(inner_steps):
        evaluation = objective(PolicyTable.from_logits(logits))
        if not np.isfinite(evaluation.loss) or not np.all(np.isfinite(evaluation.gradient)):
            raise TrainingDivergenceError(iteration, f"loss became non-finite at inner step {step}")
        records.append(
            StepRecord(
                iteration=iteration,
                step=step,
                loss=float(evaluation.loss),
                grad_inf_norm=float(np.abs(evaluation.gradient).max()),
                max_abs_dr=float(evaluation.max_abs_dr),
            )
        )
        logits = logits - lr * evaluation.gradient
        if not np.all(np.isfinite(logits)):
            raise TrainingDivergenceError(iteration, f"logits became non-finite at inner step {step}")
    logger.debug("iteration %d: final loss %.6g after %d steps", iteration, records[-1].loss, inner_steps)
    return PolicyTable.from_logits(logits), records


def train_by_descent(
    make_objective: Callable[[int, PolicyTable], Callable[[PolicyTable], LossEvaluation]],
    p_star: PolicyTable,
    p_ref: PolicyTable,
    rho: ContextDistribution,
    beta: float,
    iterations: int,
    inner_steps: int,
    lr: float,
    label: str = "descent",
) -> TrainingHistory:
    """
    Outer self-play loop around :func:`descend_logits`.

    Parameters
    ----------
    make_objective : callable
        ``make_objective(k, pi^k)`` returns the objective minimized in iteration ``k``.
    p_star : PolicyTable
        Expert, used for the logged KL.
    p_ref : PolicyTable
        Initial policy ``pi^1``.
    rho : ContextDistribution
        Prompt distribution.
    beta : float
        Temperature of the logged reward map ``beta log(pi^{k+1} / pi^k)``.
    iterations, inner_steps : int
        Outer iterations and gradient steps per iteration.
    lr : float
        Step size on logits.
    label : str
        Method name used in debug records.
    """
    if iterations < 1:
        raise InvalidParameterError(f"iterations must be positive, got {iterations}")
    policies = [p_ref.with_logits()]
    reward_maps: list[RewardTable] = []
    losses: list[float] = []
    grad_norms: list[float] = []
    steps: list[StepRecord] = []
    kl_values = [divergence(KL(), p_star, p_ref, rho)]

    for k in range(1, iterations + 1):
        p_k = policies[-1]
        p_next, records = descend_logits(p_k, make_objective(k, p_k), inner_steps, lr, iteration=k)
        steps.extend(records)
        losses.append(records[-1].loss)
        grad_norms.append(records[-1].grad_inf_norm)
        reward_maps.append(reward_mapping(p_next, p_k, beta))
        policies.append(p_next)
        kl_values.append(divergence(KL(), p_star, p_next, rho))
        logger.debug("%s iteration %d: loss=%.6g kl_expert=%.6g", label, k, losses[-1], kl_values[-1])

    return TrainingHistory(
        policies=policies,
        reward_maps=reward_maps,
        losses=losses,
        grad_norms=grad_norms,
        steps=steps,
        kl_to_expert=kl_values,
    )
