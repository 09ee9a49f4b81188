# Copyright (c) Microsoft. All rights reserved.

"""
Per-run artifacts: the iteration CSV, the inner-step CSV and the metadata JSON.

Row 0 of the iteration CSV describes the initial policy; row ``k`` describes
iteration ``k``: the game value it played, the duality gap of the first ``k``
averaged iterates and the distances of the policy it produced.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from selfplay_ail.bandit.divergences import TV, divergence
from selfplay_ail.errors import NumericalDegeneracyError
from selfplay_ail.game.descent import StepRecord, TrainingHistory
from selfplay_ail.game.engine import IterateHistory, averaged_gap, game_value
from selfplay_ail.models.tables import ContextDistribution, FloatArray, PolicyTable, RewardTable
from selfplay_ail.players.policy import reward_mapping
from selfplay_ail.utils.constants import META_SUFFIX, STEPS_SUFFIX

__all__ = [
    "CSV_COLUMNS",
    "STEP_COLUMNS",
    "LoadedArtifact",
    "RunTrace",
    "artifact_rows",
    "gap_radius",
    "read_artifact",
    "trace_from_game",
    "trace_from_training",
    "write_artifact",
]

CSV_COLUMNS: tuple[str, ...] = (
    "iteration",
    "J",
    "dual_gap",
    "kl_expert",
    "tv_expert",
    "max_abs_dr",
    "loss",
    "grad_inf_norm",
)

STEP_COLUMNS: tuple[str, ...] = ("iteration", "step", "loss", "grad_inf_norm", "max_abs_dr")


@dataclass(frozen=True)
class RunTrace:
    """
    Method-independent view of a finished run.

    Attributes
    ----------
    policies : list[PolicyTable]
        ``pi^1 .. pi^{K+1}``.
    rewards : list[RewardTable]
        Reward each iteration played against.
    kl_to_expert : list[float]
        KL to the expert of every policy.
    max_abs_dr : list[float]
        Per iteration, the largest ``|Delta r|`` seen.
    losses, grad_norms : list[float]
        Per iteration, the final inner loss and gradient norm (zero for closed-form updates).
    r_max : float
        Declared reward box; the gap may use a wider one, see :func:`gap_radius`.
    steps : list[StepRecord]
        Inner steps, empty for closed-form updates.
    """

    policies: list[PolicyTable]
    rewards: list[RewardTable]
    kl_to_expert: list[float]
    max_abs_dr: list[float]
    losses: list[float]
    grad_norms: list[float]
    r_max: float
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        """Number of iterations K."""
        return len(self.rewards)


def trace_from_game(history: IterateHistory, beta: float, r_max: float) -> RunTrace:
    """Trace of a closed-form game run; ``Delta r`` is realized from consecutive policies."""
    realized = [
        reward_mapping(b, a, beta).max_abs() for a, b in zip(history.policies[:-1], history.policies[1:], strict=True)
    ]
    zeros = [0.0] * history.iterations
    return RunTrace(
        policies=list(history.policies),
        rewards=list(history.rewards),
        kl_to_expert=list(history.kl_to_expert),
        max_abs_dr=realized,
        losses=zeros,
        grad_norms=list(zeros),
        r_max=r_max,
    )


def trace_from_training(history: TrainingHistory, r_max: float) -> RunTrace:
    """Trace of a loss-based run; ``max_abs_dr`` also covers every inner step."""
    per_iteration = [r.max_abs() for r in history.reward_maps]
    for record in history.steps:
        index = record.iteration - 1
        per_iteration[index] = max(per_iteration[index], record.max_abs_dr)
    return RunTrace(
        policies=list(history.policies),
        rewards=list(history.reward_maps),
        kl_to_expert=list(history.kl_to_expert),
        max_abs_dr=per_iteration,
        losses=list(history.losses),
        grad_norms=list(history.grad_norms),
        r_max=r_max,
        steps=list(history.steps),
    )


def _running_means(tables: list[FloatArray]) -> list[FloatArray]:
    total = np.zeros_like(tables[0]) if tables else np.zeros(0)
    means: list[FloatArray] = []
    for k, table in enumerate(tables, start=1):
        total = total + table
        means.append(total / k)
    return means


def gap_radius(trace: RunTrace) -> float:
    """
    Box radius of the logged duality gap.

    ``trace.r_max``, widened to the largest entry of any averaged reward so
    that the gap stays non-negative for methods whose rewards leave the box.
    """
    largest = max((float(np.abs(m).max()) for m in _running_means([r.values for r in trace.rewards])), default=0.0)
    return max(trace.r_max, largest)


def artifact_rows(trace: RunTrace, p_star: PolicyTable, rho: ContextDistribution) -> list[dict[str, Any]]:
    """
    Rows of the iteration CSV, ``K + 1`` of them.

    The ``dual_gap`` column is measured on the box of radius :func:`gap_radius`.

    Raises
    ------
    NumericalDegeneracyError
        If any value is not finite.
    """
    tv = [divergence(TV(), p_star, p, rho) for p in trace.policies]
    radius = gap_radius(trace)
    rows: list[dict[str, Any]] = [
        {
            "iteration": 0,
            "J": 0.0,
            "dual_gap": 2 * radius * tv[0],
            "kl_expert": trace.kl_to_expert[0],
            "tv_expert": tv[0],
            "max_abs_dr": 0.0,
            "loss": 0.0,
            "grad_inf_norm": 0.0,
        }
    ]
    policy_means = _running_means([p.probs for p in trace.policies[: trace.iterations]])
    reward_means = _running_means([r.values for r in trace.rewards])
    for k in range(1, trace.iterations + 1):
        p_k, r_k = trace.policies[k - 1], trace.rewards[k - 1]
        gap, _, _ = averaged_gap(PolicyTable(policy_means[k - 1]), reward_means[k - 1], p_star, rho, radius)
        rows.append(
            {
                "iteration": k,
                "J": game_value(p_k, r_k, p_star, rho),
                "dual_gap": gap,
                "kl_expert": trace.kl_to_expert[k],
                "tv_expert": tv[k],
                "max_abs_dr": trace.max_abs_dr[k - 1],
                "loss": trace.losses[k - 1],
                "grad_inf_norm": trace.grad_norms[k - 1],
            }
        )
    for row in rows:
        for column, value in row.items():
            if not math.isfinite(value):
                raise NumericalDegeneracyError(f"non-finite {column} at iteration {row['iteration']}")
    return rows


def _format(value: Any) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def _write_csv(path: Path, columns: tuple[str, ...], rows: list[dict[str, Any]]) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
            writer.writeheader()
            writer.writerows({key: _format(row[key]) for key in columns} for row in rows)
    except OSError as exc:
        raise OSError(f"cannot write artifact {path}: {exc.strerror or exc}") from exc


def write_artifact(
    stem: Path,
    rows: list[dict[str, Any]],
    steps: list[StepRecord],
    meta: dict[str, Any],
) -> Path:
    """
    Write ``<stem>.csv``, ``<stem>.steps.csv`` and ``<stem>.meta.json``.

    Returns
    -------
    Path
        Path of the iteration CSV.
    """
    csv_path = stem.with_name(stem.name + ".csv")
    _write_csv(csv_path, CSV_COLUMNS, rows)
    step_rows = [
        {
            "iteration": s.iteration,
            "step": s.step,
            "loss": s.loss,
            "grad_inf_norm": s.grad_inf_norm,
            "max_abs_dr": s.max_abs_dr,
        }
        for s in steps
    ]
    _write_csv(stem.with_name(stem.name + STEPS_SUFFIX), STEP_COLUMNS, step_rows)
    meta_path = stem.with_name(stem.name + META_SUFFIX)
    try:
        with meta_path.open("w", encoding="utf-8") as handle:
            json.dump(meta, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write artifact {meta_path}: {exc.strerror or exc}") from exc
    return csv_path


@dataclass(frozen=True)
class LoadedArtifact:
    """An artifact read back from disk."""

    path: Path
    rows: list[dict[str, float]]
    steps: list[dict[str, float]]
    meta: dict[str, Any]

    def column(self, name: str) -> list[float]:
        """All values of one iteration column."""
        return [row[name] for row in self.rows]


def _read_csv(path: Path) -> list[dict[str, float]]:
    with path.open(encoding="utf-8", newline="") as handle:
        return [{key: float(value) for key, value in row.items()} for row in csv.DictReader(handle)]


def read_artifact(path: str | Path) -> LoadedArtifact:
    """
    Load an iteration CSV together with its step CSV and metadata when present.

    Raises
    ------
    OSError
        If the CSV cannot be read.
    """
    csv_path = Path(path)
    stem = csv_path.with_suffix("")
    try:
        rows = _read_csv(csv_path)
    except OSError as exc:
        raise OSError(f"cannot read artifact {csv_path}: {exc.strerror or exc}") from exc
    steps_path = stem.with_name(stem.name + STEPS_SUFFIX)
    steps = _read_csv(steps_path) if steps_path.exists() else []
    meta_path = stem.with_name(stem.name + META_SUFFIX)
    meta: dict[str, Any] = {}
    if meta_path.exists():
        with meta_path.open(encoding="utf-8") as handle:
            meta = json.load(handle)
    return LoadedArtifact(path=csv_path, rows=rows, steps=steps, meta=meta)
