# Copyright (c) Microsoft. All rights reserved.

"""Compare the reward and gradient dynamics of a SPIF run and a SPIN run."""

import math
from collections import defaultdict
from collections.abc import Iterable
from dataclasses import dataclass

from selfplay_ail.errors import ComparisonError
from selfplay_ail.experiments.artifacts import LoadedArtifact
from selfplay_ail.utils.constants import BOUNDED_REWARD_SLACK, GRADIENT_WARMUP_STEPS

__all__ = ["DynamicsComparison", "compare_dynamics", "gradient_range", "opening_norms"]


@dataclass(frozen=True)
class DynamicsComparison:
    """
    Reward magnitude and gradient stability of two runs on one instance.

    Attributes
    ----------
    max_abs_dr_ratio : float
        ``max |Delta r|`` of the SPIN run over that of the SPIF run.
    grad_range_ratios : list[tuple[int, float]]
        Per iteration, SPIN's gradient-norm range over SPIF's.
    overall_grad_range_ratio : float
        SPIN's range of the opening gradient norms (first inner step of each
        iteration) over SPIF's, across the shared iterations.
    spif_bounded : bool
        Whether SPIF's ``max |Delta r|`` stayed below ``1/c + 0.05`` throughout.
    spif_max_abs_dr, spin_max_abs_dr : float
        The two maxima.
    bound : float
        ``1/c + 0.05``.
    """

    max_abs_dr_ratio: float
    grad_range_ratios: list[tuple[int, float]]
    overall_grad_range_ratio: float
    spif_bounded: bool
    spif_max_abs_dr: float
    spin_max_abs_dr: float
    bound: float


def _ratio(numerator: float, denominator: float) -> float:
    if numerator == denominator:
        return 1.0
    if denominator == 0:
        return math.inf
    return numerator / denominator


def gradient_range(norms: Iterable[float]) -> float:
    """``max / min`` of gradient norms; 1 for an empty or constant sequence."""
    values = list(norms)
    if not values:
        return 1.0
    return _ratio(max(values), min(values))


def opening_norms(steps: Iterable[tuple[int, int, float]]) -> dict[int, float]:
    """
    Gradient norm at the first inner step of each outer iteration.

    ``steps`` yields ``(iteration, step, grad_inf_norm)``. A converged inner
    loop drives its late norms to zero, so stability across iterations is
    read from where each iteration starts.
    """
    return {iteration: norm for iteration, step, norm in steps if step == 0}


def _artifact_opening_norms(artifact: LoadedArtifact) -> dict[int, float]:
    return opening_norms((int(s["iteration"]), int(s["step"]), s["grad_inf_norm"]) for s in artifact.steps)


def _max_abs_dr(artifact: LoadedArtifact) -> float:
    values = artifact.column("max_abs_dr") + [step["max_abs_dr"] for step in artifact.steps]
    return max(values, default=0.0)


def _norms_by_iteration(artifact: LoadedArtifact) -> dict[int, list[float]]:
    grouped: dict[int, list[float]] = defaultdict(list)
    for step in artifact.steps:
        if step["step"] >= GRADIENT_WARMUP_STEPS:
            grouped[int(step["iteration"])].append(step["grad_inf_norm"])
    return grouped


def compare_dynamics(spif: LoadedArtifact, spin: LoadedArtifact, c: float | None = None) -> DynamicsComparison:
    """
    Compare a SPIF artifact with a SPIN artifact.

    Parameters
    ----------
    spif, spin : LoadedArtifact
        Artifacts read with :func:`read_artifact`.
    c : float, optional
        Reward penalty weight; read from the SPIF metadata when omitted.

    Returns
    -------
    DynamicsComparison
        Magnitude and gradient-range ratios with the boundedness flag.

    Raises
    ------
    ComparisonError
        If the artifacts come from different instances or seeds, or ``c`` is unknown.
    """
    for key in ("fingerprint", "seed"):
        if spif.meta.get(key) != spin.meta.get(key):
            raise ComparisonError(f"artifacts differ in {key}: {spif.meta.get(key)!r} vs {spin.meta.get(key)!r}")
    c = c if c is not None else spif.meta.get("c")
    if c is None or not c > 0:
        raise ComparisonError(f"{spif.path} carries no reward penalty weight c")

    spif_max, spin_max = _max_abs_dr(spif), _max_abs_dr(spin)
    bound = 1.0 / c + BOUNDED_REWARD_SLACK

    spif_norms, spin_norms = _norms_by_iteration(spif), _norms_by_iteration(spin)
    shared = sorted(set(spif_norms) & set(spin_norms))
    per_iteration = [(k, _ratio(gradient_range(spin_norms[k]), gradient_range(spif_norms[k]))) for k in shared]
    spif_open, spin_open = _artifact_opening_norms(spif), _artifact_opening_norms(spin)
    opened = sorted(set(spif_open) & set(spin_open))
    overall = _ratio(
        gradient_range(spin_open[k] for k in opened),
        gradient_range(spif_open[k] for k in opened),
    )
    return DynamicsComparison(
        max_abs_dr_ratio=_ratio(spin_max, spif_max),
        grad_range_ratios=per_iteration,
        overall_grad_range_ratio=overall,
        spif_bounded=spif_max <= bound,
        spif_max_abs_dr=spif_max,
        spin_max_abs_dr=spin_max,
        bound=bound,
    )
