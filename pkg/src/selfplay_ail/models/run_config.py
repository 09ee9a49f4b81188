# Copyright (c) Microsoft. All rights reserved.

"""
Declarative run configuration.

A run file is TOML with top-level ``kind``, ``seeds`` and ``out_dir`` keys and
the sections ``[bandit]``, ``[game]``, ``[spif]``, ``[baseline]`` and
``[sweep]``. Missing keys fall back to :func:`get_default_run_settings`.
Every problem in a file is collected and reported at once before any run
starts.
"""

import copy
import tomllib
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from selfplay_ail.config import get_default_out_dir, get_default_run_settings
from selfplay_ail.errors import ConfigValidationError
from selfplay_ail.models.game import GameMode, LinkFunction
from selfplay_ail.models.tables import RngSeed

__all__ = [
    "BanditSettings",
    "BaselineSettings",
    "ExperimentKind",
    "GameSettings",
    "RunConfig",
    "SpifSettings",
    "SweepSettings",
    "load_run_config",
    "validate_run_config",
]


class ExperimentKind(StrEnum):
    """What a run file executes."""

    GAME = "game"
    SPIF = "spif"
    SPIN = "spin"
    LINEAR_SPIN = "linear_spin"
    SPPO = "sppo"
    INPO = "inpo"
    ITER_DPO = "iter_dpo"
    GAP_RATE_SWEEP = "gap_rate_sweep"
    C_ABLATION = "c_ablation"
    REGULARIZER_ABLATION = "regularizer_ablation"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class BanditSettings(_Section):
    """Instance dimensions and how the expert and reference are drawn."""

    n_contexts: int = Field(ge=1, description="Number of contexts")
    n_responses: int = Field(ge=2, description="Number of responses")
    expert_concentration: float = Field(gt=0, description="Dirichlet concentration of the expert rows")
    reference: Literal["uniform", "dirichlet"] = Field(description="Initial policy family")
    reference_concentration: float = Field(default=1.0, gt=0, description="Dirichlet concentration of pi_ref")


class GameSettings(_Section):
    """General self-play loop."""

    iterations: int = Field(ge=1, description="Iterations K")
    beta: float = Field(gt=0, description="Policy KL temperature")
    r_max: float = Field(gt=0, description="Reward box radius")
    zeta: float = Field(ge=0, description="Reward proximal weight")
    regularizer: Literal["box", "mixed_quadratic"] = Field(description="Reward regularizer psi")
    c: float = Field(gt=0, description="Mixed quadratic weight")
    alpha: float = Field(gt=0, lt=1, description="Mixed quadratic expert weight")
    link: LinkFunction = Field(description="Link applied to the reward gap")
    mode: GameMode = Field(description="Whether the policy consumes Delta r")
    schedule: Literal["fixed", "sqrt_horizon"] = Field(
        description="'sqrt_horizon' sets beta and zeta proportional to sqrt(K)"
    )


class SpifSettings(_Section):
    """Chi-square self-play imitation finetuning."""

    iterations: int = Field(ge=1, description="Self-play iterations")
    beta: float = Field(gt=0, description="Log-ratio temperature")
    c: float = Field(gt=0, description="Reward penalty weight")
    alpha: float = Field(gt=0, lt=1, description="Expert weight")
    zeta: float = Field(ge=0, description="Proximal weight")
    regularizer_form: Literal["union", "expert"] = Field(description="Measure of the proximal term")
    inner_steps: int = Field(ge=1, description="Gradient steps per iteration")
    lr: float = Field(gt=0, description="Logit step size")
    sampling: Literal["exact", "monte_carlo"] = Field(description="Exact expectations or sampled datasets")
    n: int = Field(ge=1, description="Pairs per sampled dataset")
    history_window: int = Field(ge=1, description="Model datasets pooled per iteration")


class BaselineSettings(_Section):
    """SPIN, linear SPIN, SPPO, INPO and iterative DPO."""

    iterations: int = Field(ge=1, description="Self-play iterations")
    beta: float = Field(gt=0, description="Temperature of SPIN, SPPO and DPO")
    r_max: float = Field(gt=0, description="Sign-reward radius of linear SPIN")
    eta: float = Field(gt=0, description="INPO eta")
    tau: float = Field(gt=0, description="INPO tau")
    inner_steps: int = Field(ge=1, description="Gradient steps per iteration")
    lr: float = Field(gt=0, description="Logit step size")


class SweepSettings(_Section):
    """Axes of the sweep kinds."""

    horizons: list[int] = Field(min_length=1, description="Horizons K of the gap-rate sweep")
    c_values: list[float] = Field(min_length=1, description="Values of c in the c-ablation")


class RunConfig(_Section):
    """A validated run file."""

    kind: ExperimentKind = Field(description="Experiment to execute")
    seeds: list[RngSeed] = Field(min_length=1, description="Seeds; one run per seed and sweep point")
    out_dir: Path = Field(description="Directory receiving artifacts")
    bandit: BanditSettings
    game: GameSettings
    spif: SpifSettings
    baseline: BaselineSettings
    sweep: SweepSettings


_SECTIONS: dict[str, type[_Section]] = {
    "bandit": BanditSettings,
    "game": GameSettings,
    "spif": SpifSettings,
    "baseline": BaselineSettings,
    "sweep": SweepSettings,
}

_GAME_KINDS = {ExperimentKind.GAME, ExperimentKind.GAP_RATE_SWEEP}
_SPIF_KINDS = {ExperimentKind.SPIF, ExperimentKind.C_ABLATION, ExperimentKind.REGULARIZER_ABLATION}


def _format_error(error: Any) -> str:
    location = ".".join(str(part) for part in error["loc"]) or "<root>"
    return f"{location}: {error['msg']}"


def _merge(defaults: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _precondition_violations(kind: ExperimentKind | None, sections: dict[str, Any], seeds: Any) -> list[str]:
    violations: list[str] = []
    if isinstance(seeds, list) and len(set(map(str, seeds))) != len(seeds):
        violations.append("seeds: seeds must be distinct")

    game = sections.get("game")
    if kind in _GAME_KINDS and isinstance(game, GameSettings):
        if game.regularizer == "box" and game.schedule == "fixed" and game.zeta <= 0:
            violations.append("game.zeta: the box regularizer needs a positive proximal weight")
        if game.regularizer == "mixed_quadratic" and game.schedule == "sqrt_horizon":
            violations.append("game.schedule: the sqrt_horizon schedule is defined for the box regularizer only")

    sweep = sections.get("sweep")
    if kind is ExperimentKind.GAP_RATE_SWEEP and isinstance(sweep, SweepSettings):
        if len(set(sweep.horizons)) < 3:
            violations.append("sweep.horizons: a rate fit needs at least three distinct horizons")
        if min(sweep.horizons) < 1:
            violations.append("sweep.horizons: horizons must be positive")
    if kind is ExperimentKind.C_ABLATION and isinstance(sweep, SweepSettings) and min(sweep.c_values) <= 0:
        violations.append("sweep.c_values: every c must be positive")

    spif = sections.get("spif")
    if kind is ExperimentKind.REGULARIZER_ABLATION and isinstance(spif, SpifSettings) and spif.zeta <= 0:
        violations.append("spif.zeta: the regularizer ablation compares a positive zeta against zeta = 0")
    if kind in _SPIF_KINDS and isinstance(spif, SpifSettings):
        if spif.sampling == "exact" and spif.history_window > 1:
            violations.append("spif.history_window: dataset pooling needs monte_carlo sampling")

    baseline = sections.get("baseline")
    if kind is ExperimentKind.INPO and isinstance(baseline, BaselineSettings) and baseline.tau > baseline.eta:
        violations.append(f"baseline.tau: tau ({baseline.tau}) must not exceed eta ({baseline.eta})")
    return violations


def validate_run_config(raw: dict[str, Any], defaults: dict[str, Any] | None = None) -> RunConfig:
    """
    Validate a raw mapping against defaults and every method precondition.

    Parameters
    ----------
    raw : dict[str, Any]
        Parsed run file, possibly partial.
    defaults : dict[str, Any], optional
        Settings filling missing keys; :func:`get_default_run_settings` when omitted.

    Returns
    -------
    RunConfig
        The validated configuration.

    Raises
    ------
    ConfigValidationError
        Listing every schema and precondition violation.
    """
    base = _merge(defaults or get_default_run_settings(), {"seeds": [0], "out_dir": get_default_out_dir()})
    merged = _merge(base, raw)
    violations: list[str] = []
    config: RunConfig | None = None
    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as exc:
        violations.extend(_format_error(error) for error in exc.errors())

    sections: dict[str, Any] = {}
    for name, model in _SECTIONS.items():
        try:
            sections[name] = model.model_validate(merged.get(name, {}))
        except ValidationError:
            continue
    kind = merged.get("kind")
    known_kind = ExperimentKind(kind) if kind in {member.value for member in ExperimentKind} else None
    violations.extend(_precondition_violations(known_kind, sections, merged.get("seeds")))

    if violations or config is None:
        raise ConfigValidationError(violations)
    return config


def load_run_config(path: str | Path, defaults: dict[str, Any] | None = None) -> RunConfig:
    """
    Read and validate a TOML run file.

    Raises
    ------
    OSError
        If the file cannot be read.
    ConfigValidationError
        If the file is not valid TOML or violates any constraint.
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            raw = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigValidationError([f"{path}: {exc}"]) from exc
    return validate_run_config(raw, defaults)
