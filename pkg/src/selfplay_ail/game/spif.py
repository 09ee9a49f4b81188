# Copyright (c) Microsoft. All rights reserved.

"""
Chi-square self-play imitation finetuning.

The policy regresses the log-ratio reward ``Delta r = beta log(pi / pi^k)``
onto bounded targets: ``r_max_target`` on expert responses and
``r_min_target`` on responses of the current model. A small proximal term on
``log(pi / pi^k)`` keeps each step close to ``pi^k``.
"""

import math
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass
from typing import Literal

import numpy as np

from selfplay_ail.bandit.core import check_same_shape, sample_pairs
from selfplay_ail.errors import MissingLogitsError
from selfplay_ail.game.descent import (
    LossEvaluation,
    TrainingHistory,
    project_to_logits,
    train_by_descent,
)
from selfplay_ail.models.spif import (
    ExactSampling,
    MonteCarloSampling,
    SampledDataset,
    SpifConfig,
    SpifLossSpec,
)
from selfplay_ail.models.tables import BanditSpace, ContextDistribution, FloatArray, PolicyTable

__all__ = [
    "exhaustive_dataset",
    "sample_dataset",
    "spif_evaluate",
    "spif_gradient",
    "spif_gradient_sampled",
    "spif_loss_exact",
    "spif_loss_sampled",
    "spif_train",
]


@dataclass(frozen=True)
class _Measures:
    expert: FloatArray
    model: FloatArray
    proximal: FloatArray
    expert_weight: float
    model_weight: float


def _exact_measures(p_k: PolicyTable, p_star: PolicyTable, rho: ContextDistribution, spec: SpifLossSpec) -> _Measures:
    expert = rho.probs[:, None] * p_star.probs
    model = rho.probs[:, None] * p_k.probs
    proximal = expert if spec.regularizer_form == "expert" else 0.5 * (expert + model)
    return _Measures(expert, model, proximal, spec.alpha, 1 - spec.alpha)


def _sampled_measures(d_star: SampledDataset, d_k: SampledDataset, spec: SpifLossSpec) -> _Measures:
    expert = d_star.empirical_measure()
    model = d_k.empirical_measure()
    if spec.regularizer_form == "expert":
        proximal = expert
    else:
        w_star, w_k = d_star.total_weight(), d_k.total_weight()
        proximal = (w_star * expert + w_k * model) / (w_star + w_k)
    return _Measures(expert, model, proximal, 0.5, 0.5)


def _evaluate(pi: PolicyTable, p_k: PolicyTable, measures: _Measures, spec: SpifLossSpec) -> LossEvaluation:
    log_ratio = pi.log_probs() - p_k.log_probs()
    dr = spec.beta * log_ratio
    expert_residual = dr - spec.r_max_target
    model_residual = dr - spec.r_min_target
    proximal_scale = spec.beta**2 if spec.regularizer_form == "expert" else 1.0

    loss = math.fsum([
        measures.expert_weight * math.fsum((measures.expert * expert_residual**2).ravel()),
        measures.model_weight * math.fsum((measures.model * model_residual**2).ravel()),
        0.5 * spec.zeta * proximal_scale * math.fsum((measures.proximal * log_ratio**2).ravel()),
    ])
    dlogp = (
        2 * measures.expert_weight * spec.beta * measures.expert * expert_residual
        + 2 * measures.model_weight * spec.beta * measures.model * model_residual
        + spec.zeta * proximal_scale * measures.proximal * log_ratio
    )
    return LossEvaluation(loss, project_to_logits(pi, dlogp), float(np.abs(dr).max()))


def spif_loss_exact(
    pi: PolicyTable,
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    spec: SpifLossSpec,
) -> float:
    """
    Exact least-squares loss.

    ``alpha E_{rho,p*}[(Delta r - r_max)^2] + (1 - alpha) E_{rho,pi^k}[(Delta r - r_min)^2]``
    plus the proximal term ``(zeta/2) E_{rho,(p* + pi^k)/2}[(log pi/pi^k)^2]``
    (or ``(zeta/2) beta^2 E_{rho,p*}[...]`` for the expert form).
    """
    check_same_shape(pi, p_k, p_star)
    return _evaluate(pi, p_k, _exact_measures(p_k, p_star, rho, spec), spec).loss


def spif_loss_sampled(
    pi: PolicyTable,
    p_k: PolicyTable,
    d_star: SampledDataset,
    d_k: SampledDataset,
    spec: SpifLossSpec,
) -> float:
    """
    Empirical loss on an expert dataset and a model dataset.

    Both square terms get weight 1/2; the proximal term averages over the
    union of both datasets.
    """
    check_same_shape(pi, p_k)
    return _evaluate(pi, p_k, _sampled_measures(d_star, d_k, spec), spec).loss


def spif_gradient(
    pi: PolicyTable,
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    spec: SpifLossSpec,
) -> FloatArray:
    """
    Gradient of :func:`spif_loss_exact` with respect to the logits of ``pi``.

    Raises
    ------
    MissingLogitsError
        If ``pi`` carries no logits.
    """
    if pi.logits is None:
        raise MissingLogitsError("spif_gradient needs a policy parameterized by logits")
    check_same_shape(pi, p_k, p_star)
    return _evaluate(pi, p_k, _exact_measures(p_k, p_star, rho, spec), spec).gradient


def spif_gradient_sampled(
    pi: PolicyTable,
    p_k: PolicyTable,
    d_star: SampledDataset,
    d_k: SampledDataset,
    spec: SpifLossSpec,
) -> FloatArray:
    """Gradient of :func:`spif_loss_sampled` with respect to the logits of ``pi``."""
    if pi.logits is None:
        raise MissingLogitsError("spif_gradient_sampled needs a policy parameterized by logits")
    return _evaluate(pi, p_k, _sampled_measures(d_star, d_k, spec), spec).gradient


def spif_evaluate(
    pi: PolicyTable,
    p_k: PolicyTable,
    p_star: PolicyTable,
    rho: ContextDistribution,
    spec: SpifLossSpec,
) -> LossEvaluation:
    """Exact loss, logit gradient and largest ``|Delta r|`` in one pass."""
    return _evaluate(pi, p_k, _exact_measures(p_k, p_star, rho, spec), spec)


def sample_dataset(
    rho: ContextDistribution,
    pi: PolicyTable,
    n: int,
    rng: np.random.Generator,
    source: Literal["expert", "model"] = "model",
    iteration: int | None = None,
) -> SampledDataset:
    """Draw ``n`` pairs ``x ~ rho, y ~ pi(.|x)``."""
    space = BanditSpace(n_contexts=pi.n_contexts, n_responses=pi.n_responses)
    pairs = sample_pairs(rho, pi, n, rng)
    return SampledDataset(pairs=pairs, space=space, source=source, iteration=iteration)


def exhaustive_dataset(
    rho: ContextDistribution, pi: PolicyTable, source: Literal["expert", "model"] = "model"
) -> SampledDataset:
    """Every cell once, weighted by ``rho(x) pi(y|x)``."""
    n_contexts, n_responses = pi.shape
    contexts, responses = np.meshgrid(np.arange(n_contexts), np.arange(n_responses), indexing="ij")
    pairs = np.stack([contexts.ravel(), responses.ravel()], axis=1)
    weights = (rho.probs[:, None] * pi.probs).ravel()
    space = BanditSpace(n_contexts=n_contexts, n_responses=n_responses)
    return SampledDataset(pairs=pairs, space=space, source=source, weights=weights)


def spif_train(
    config: SpifConfig,
    p_star: PolicyTable,
    p_ref: PolicyTable,
    rho: ContextDistribution,
    inner_steps: int,
    lr: float,
    sampling: ExactSampling | MonteCarloSampling | None = None,
) -> TrainingHistory:
    """
    Run chi-square self-play imitation finetuning.

    Parameters
    ----------
    config : SpifConfig
        Number of iterations and loss hyperparameters.
    p_star : PolicyTable
        Expert policy.
    p_ref : PolicyTable
        Initial policy ``pi^1``.
    rho : ContextDistribution
        Prompt distribution.
    inner_steps : int
        Gradient steps per self-play iteration.
    lr : float
        Gradient step size on logits.
    sampling : ExactSampling or MonteCarloSampling, optional
        Exact expectations (default) or sampled datasets.

    Returns
    -------
    TrainingHistory
        Policies, realized ``Delta r`` maps and per-step traces.
    """
    check_same_shape(p_star, p_ref)
    sampling = sampling or ExactSampling()
    spec = config.loss

    if isinstance(sampling, MonteCarloSampling):
        n_pairs = sampling.n
        streams = np.random.SeedSequence(sampling.seed).spawn(config.iterations)
        model_window: deque[SampledDataset] = deque(maxlen=sampling.history_window)

        def measures_for(k: int, p_k: PolicyTable) -> _Measures:
            rng = np.random.default_rng(streams[k - 1])
            d_star = sample_dataset(rho, p_star, n_pairs, rng, source="expert", iteration=k)
            model_window.append(sample_dataset(rho, p_k, n_pairs, rng, source="model", iteration=k))
            pooled = model_window[0]
            for extra in list(model_window)[1:]:
                pooled = pooled.merged(extra)
            return _sampled_measures(d_star, pooled, spec)

    else:

        def measures_for(k: int, p_k: PolicyTable) -> _Measures:
            return _exact_measures(p_k, p_star, rho, spec)

    def make_objective(k: int, p_k: PolicyTable) -> Callable[[PolicyTable], LossEvaluation]:
        measures = measures_for(k, p_k)
        return lambda pi: _evaluate(pi, p_k, measures, spec)

    return train_by_descent(
        make_objective, p_star, p_ref, rho, spec.beta, config.iterations, inner_steps, lr, label="spif"
    )
