# Copyright (c) Microsoft. All rights reserved.

"""
Batch runner: expands a run configuration into independent runs and writes their artifacts.

Every (method, seed, sweep point) combination is one run. Runs are executed
on the injected worker pool; each run is sequential and writes only its own
files, so results do not depend on the number of workers.
"""

import json
import logging
import time
from concurrent.futures import Executor
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any

from dependency_injector.wiring import Provide, inject
from opentelemetry.trace import Tracer

from selfplay_ail.bandit.core import BanditInstance, default_instance
from selfplay_ail.baselines.preference import expert_oracle, inpo_train, iterative_dpo_iterates, sppo_train
from selfplay_ail.baselines.spin import linear_spin_run, spin_train
from selfplay_ail.errors import ConvergedBelowToleranceError
from selfplay_ail.experiments.artifacts import (
    RunTrace,
    artifact_rows,
    gap_radius,
    trace_from_game,
    trace_from_training,
    write_artifact,
)
from selfplay_ail.game.descent import TrainingHistory
from selfplay_ail.game.engine import rate_fit, run_selfplay, sqrt_horizon_schedule
from selfplay_ail.game.spif import spif_train
from selfplay_ail.models.game import BoxRegularizer, GameConfig, MixedQuadraticRegularizer, RegularizerSpec
from selfplay_ail.models.preferences import InpoConfig
from selfplay_ail.models.run_config import ExperimentKind, RunConfig
from selfplay_ail.models.spif import ExactSampling, MonteCarloSampling, SpifConfig, SpifLossSpec
from selfplay_ail.models.tables import BanditSpace
from selfplay_ail.utils.constants import SUMMARY_FILENAME

__all__ = ["RunPlan", "RunResult", "execute_run", "plan_runs", "run", "software_version"]

logger = logging.getLogger(__name__)


def software_version() -> str:
    """Installed package version, or ``0+unknown`` from a source checkout."""
    try:
        return version("selfplay-ail")
    except PackageNotFoundError:
        return "0+unknown"


@dataclass(frozen=True)
class RunPlan:
    """One (method, seed, sweep point) combination."""

    kind: ExperimentKind
    seed: int
    point: dict[str, float] = field(default_factory=dict)

    @property
    def stem(self) -> str:
        """File stem shared by the run's artifacts."""
        suffix = "".join(f"_{key}{value:g}" for key, value in self.point.items())
        return f"{self.kind.value}_seed{self.seed}{suffix}"


@dataclass(frozen=True)
class RunResult:
    """A finished run, before it is written."""

    plan: RunPlan
    rows: list[dict[str, Any]]
    trace: RunTrace
    meta: dict[str, Any]


def plan_runs(config: RunConfig) -> list[RunPlan]:
    """Expand the configuration into runs, seeds outermost."""
    plans: list[RunPlan] = []
    for seed in config.seeds:
        match config.kind:
            case ExperimentKind.GAP_RATE_SWEEP:
                plans.extend(RunPlan(config.kind, seed, {"K": k}) for k in config.sweep.horizons)
            case ExperimentKind.C_ABLATION:
                plans.extend(RunPlan(config.kind, seed, {"c": c}) for c in config.sweep.c_values)
            case ExperimentKind.REGULARIZER_ABLATION:
                plans.extend(RunPlan(config.kind, seed, {"zeta": z}) for z in (config.spif.zeta, 0.0))
            case _:
                plans.append(RunPlan(config.kind, seed))
    return plans


def _instance(config: RunConfig, seed: int) -> BanditInstance:
    settings = config.bandit
    return default_instance(
        BanditSpace(n_contexts=settings.n_contexts, n_responses=settings.n_responses),
        seed,
        expert_concentration=settings.expert_concentration,
        reference=settings.reference,
        reference_concentration=settings.reference_concentration,
    )


def _game_trace(config: RunConfig, instance: BanditInstance, iterations: int) -> RunTrace:
    settings = config.game
    beta, zeta = settings.beta, settings.zeta
    if settings.schedule == "sqrt_horizon":
        schedule = sqrt_horizon_schedule(iterations, instance.p_star, instance.p_ref, instance.rho, settings.r_max)
        beta, zeta = schedule.beta, schedule.zeta
    psi: BoxRegularizer | MixedQuadraticRegularizer
    if settings.regularizer == "box":
        psi = BoxRegularizer(r_max=settings.r_max)
    else:
        psi = MixedQuadraticRegularizer(c=settings.c, alpha=settings.alpha)
    game = GameConfig(
        iterations=iterations,
        beta=beta,
        r_max=settings.r_max,
        link=settings.link,
        regularizer=RegularizerSpec(psi=psi, bregman_weight=zeta),
        mode=settings.mode,
    )
    history = run_selfplay(game, instance.p_star, instance.p_ref, instance.rho)
    return trace_from_game(history, beta, settings.r_max)


def _spif_trace(config: RunConfig, instance: BanditInstance, seed: int, c: float, zeta: float) -> RunTrace:
    settings = config.spif
    spec = SpifLossSpec(
        beta=settings.beta, c=c, alpha=settings.alpha, zeta=zeta, regularizer_form=settings.regularizer_form
    )
    sampling: ExactSampling | MonteCarloSampling = ExactSampling()
    if settings.sampling == "monte_carlo":
        sampling = MonteCarloSampling(n=settings.n, seed=seed, history_window=settings.history_window)
    history = spif_train(
        SpifConfig(iterations=settings.iterations, loss=spec),
        instance.p_star,
        instance.p_ref,
        instance.rho,
        inner_steps=settings.inner_steps,
        lr=settings.lr,
        sampling=sampling,
    )
    return trace_from_training(history, max(spec.r_max_target, -spec.r_min_target))


def _baseline_trace(config: RunConfig, instance: BanditInstance) -> RunTrace:
    settings = config.baseline
    p_star, p_ref, rho = instance.p_star, instance.p_ref, instance.rho
    match config.kind:
        case ExperimentKind.SPIN:
            history = spin_train(
                p_star, p_ref, rho, settings.beta, settings.iterations, settings.inner_steps, settings.lr
            )
        case ExperimentKind.LINEAR_SPIN:
            game = linear_spin_run(p_star, p_ref, rho, settings.beta, settings.r_max, settings.iterations)
            return trace_from_game(game, settings.beta, settings.r_max)
        case ExperimentKind.SPPO:
            history = sppo_train(
                p_star,
                p_ref,
                expert_oracle(p_star),
                rho,
                settings.beta,
                settings.iterations,
                settings.inner_steps,
                settings.lr,
            )
        case ExperimentKind.INPO:
            inpo = InpoConfig(eta=settings.eta, tau=settings.tau, p_ref=p_ref)
            history = inpo_train(
                p_star, expert_oracle(p_star), rho, inpo, settings.iterations, settings.inner_steps, settings.lr
            )
        case ExperimentKind.ITER_DPO:
            policies = iterative_dpo_iterates(p_ref, expert_oracle(p_star), settings.beta, settings.iterations)
            history = TrainingHistory.from_policies(policies, p_star, rho, settings.beta)
        case _:
            raise ValueError(f"{config.kind} is not a baseline")
    return trace_from_training(history, settings.r_max)


def _spif_c(config: RunConfig, plan: RunPlan) -> float | None:
    if plan.kind is ExperimentKind.C_ABLATION:
        return float(plan.point["c"])
    if plan.kind in {ExperimentKind.SPIF, ExperimentKind.REGULARIZER_ABLATION}:
        return config.spif.c
    if plan.kind in {ExperimentKind.GAME, ExperimentKind.GAP_RATE_SWEEP} and config.game.regularizer != "box":
        return config.game.c
    return None


def execute_run(plan: RunPlan, config: RunConfig, tracer: Tracer) -> RunResult:
    """
    Execute one run and build its rows and metadata.

    Parameters
    ----------
    plan : RunPlan
        Method, seed and sweep point.
    config : RunConfig
        Full configuration, echoed into the metadata.
    tracer : Tracer
        Tracer for the run span.

    Returns
    -------
    RunResult
        Rows, trace and metadata; nothing is written yet.
    """
    with tracer.start_as_current_span("selfplay_ail.run") as span:
        span.set_attribute("run.kind", plan.kind.value)
        span.set_attribute("run.seed", plan.seed)
        span.set_attribute("run.point", json.dumps(plan.point, sort_keys=True))
        logger.info("Starting %s", plan.stem)

        instance = _instance(config, plan.seed)
        match plan.kind:
            case ExperimentKind.GAME:
                trace = _game_trace(config, instance, config.game.iterations)
            case ExperimentKind.GAP_RATE_SWEEP:
                trace = _game_trace(config, instance, int(plan.point["K"]))
            case ExperimentKind.SPIF:
                trace = _spif_trace(config, instance, plan.seed, config.spif.c, config.spif.zeta)
            case ExperimentKind.C_ABLATION:
                trace = _spif_trace(config, instance, plan.seed, float(plan.point["c"]), config.spif.zeta)
            case ExperimentKind.REGULARIZER_ABLATION:
                trace = _spif_trace(config, instance, plan.seed, config.spif.c, float(plan.point["zeta"]))
            case _:
                trace = _baseline_trace(config, instance)

        rows = artifact_rows(trace, instance.p_star, instance.rho)
        meta = {
            "kind": plan.kind.value,
            "seed": plan.seed,
            "point": plan.point,
            "fingerprint": instance.fingerprint(),
            "c": _spif_c(config, plan),
            "gap_radius": gap_radius(trace),
            "version": software_version(),
            "config": config.model_dump(mode="json"),
        }
        return RunResult(plan=plan, rows=rows, trace=trace, meta=meta)


def _final_metrics(result: RunResult) -> dict[str, Any]:
    last = result.rows[-1]
    return {
        "stem": result.plan.stem,
        "seed": result.plan.seed,
        "point": result.plan.point,
        "iterations": last["iteration"],
        "J": last["J"],
        "dual_gap": last["dual_gap"],
        "kl_expert": last["kl_expert"],
        "tv_expert": last["tv_expert"],
        "max_abs_dr": max(row["max_abs_dr"] for row in result.rows),
    }


def _rate_exponents(config: RunConfig, results: list[RunResult]) -> dict[str, float | None]:
    exponents: dict[str, float | None] = {}
    for seed in config.seeds:
        gaps = [(int(r.plan.point["K"]), float(r.rows[-1]["dual_gap"])) for r in results if r.plan.seed == seed]
        try:
            exponents[str(seed)] = rate_fit(gaps)[0]
        except ConvergedBelowToleranceError:
            logger.warning("seed %d: duality gap reached zero, no rate fitted", seed)
            exponents[str(seed)] = None
    return exponents


@inject
def run(
    config: RunConfig,
    executor: Executor = Provide["executor"],
    tracer: Tracer = Provide["tracer"],
) -> dict[str, Any]:
    """
    Execute every run of a configuration and write its artifacts.

    Writes one ``<stem>.csv`` (with ``.steps.csv`` and ``.meta.json``) per run
    and ``summary.json`` with the config echo, per-run final metrics and, for
    the gap-rate sweep, the fitted rate exponent per seed.

    Parameters
    ----------
    config : RunConfig
        Validated configuration.
    executor : Executor
        Pool executing independent runs (injected).
    tracer : Tracer
        Tracer for run spans (injected).

    Returns
    -------
    dict[str, Any]
        The summary that was written.

    Raises
    ------
    OSError
        If the output directory or an artifact cannot be written.
    """
    started = time.perf_counter()
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc.strerror or exc}") from exc

    plans = plan_runs(config)
    logger.info("Executing %d run(s) of kind %s", len(plans), config.kind.value)
    results = list(executor.map(lambda plan: execute_run(plan, config, tracer), plans))

    for result in results:
        path = write_artifact(out_dir / result.plan.stem, result.rows, result.trace.steps, result.meta)
        logger.info("Wrote %s", path)

    summary: dict[str, Any] = {
        "config": config.model_dump(mode="json"),
        "version": software_version(),
        "runs": [_final_metrics(result) for result in results],
    }
    if config.kind is ExperimentKind.GAP_RATE_SWEEP:
        summary["rate_exponents"] = _rate_exponents(config, results)
    if config.kind is ExperimentKind.C_ABLATION:
        runs = summary["runs"]
        summary["final_tv_by_c"] = {
            f"{c:g}": [m["tv_expert"] for m in runs if m["point"].get("c") == c] for c in config.sweep.c_values
        }
    summary["wall_clock_seconds"] = time.perf_counter() - started

    summary_path = out_dir / SUMMARY_FILENAME
    try:
        with summary_path.open("w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write summary {summary_path}: {exc.strerror or exc}") from exc
    return summary
