# Copyright (c) Microsoft. All rights reserved.

"""
Property suite behind the ``verify`` command.

Each claim runs a batch of exact checks or small experiments and reports
pass or fail with a one-line detail. Claims never raise: a library error
inside a claim marks it failed.
"""

import logging
import math
import statistics
import tempfile
import time
from collections.abc import Callable, Sequence
from concurrent.futures import Executor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
from dependency_injector.wiring import Provide, inject
from opentelemetry.trace import Tracer

from selfplay_ail.bandit.core import default_instance, random_policy
from selfplay_ail.bandit.divergences import (
    KL,
    TV,
    MixedChi2,
    brute_force_variational_max,
    divergence,
    optimal_mixed_chi2_reward,
    variational_value,
)
from selfplay_ail.baselines.preference import (
    chi2_ail_sppo_gradient,
    contraction_check_dpo,
    inpo_displayed_gradient,
    inpo_gradient,
    iterative_dpo_iterates,
    iterative_dpo_step,
    sppo_gradient,
)
from selfplay_ail.baselines.spin import contraction_check_spin, spin_exact_iterates, spin_train
from selfplay_ail.errors import ConvergedBelowToleranceError, SelfPlayError, TrainingDivergenceError
from selfplay_ail.experiments.compare import gradient_range, opening_norms
from selfplay_ail.experiments.runner import run
from selfplay_ail.game.descent import TrainingHistory
from selfplay_ail.game.engine import duality_gap, game_value, rate_fit, run_selfplay, sqrt_horizon_schedule
from selfplay_ail.game.spif import spif_gradient, spif_loss_exact, spif_train
from selfplay_ail.models.game import BoxRegularizer, GameConfig, GameMode, RegularizerSpec
from selfplay_ail.models.preferences import InpoConfig, PreferenceOracle
from selfplay_ail.models.run_config import validate_run_config
from selfplay_ail.models.spif import SpifConfig, SpifLossSpec
from selfplay_ail.models.tables import BanditSpace, ContextDistribution, PolicyTable, RewardTable, make_rng
from selfplay_ail.players.policy import kl_upper_check, one_step_descent_check
from selfplay_ail.players.reward import sign_reward
from selfplay_ail.utils.constants import BOUNDED_REWARD_SLACK

__all__ = ["CLAIM_TITLES", "ClaimResult", "verify"]

logger = logging.getLogger(__name__)

DEFAULT_SPACE = BanditSpace(n_contexts=4, n_responses=8)

# Offset between the two policies of a random pair so they never share a seed.
_PAIR_OFFSET = 1_000_003


@dataclass(frozen=True)
class ClaimResult:
    """Outcome of one verification claim."""

    number: int
    title: str
    passed: bool
    detail: str
    seconds: float


ClaimCheck = Callable[[Sequence[int]], tuple[bool, str]]


def _pair(space: BanditSpace, seed: int, concentration: float = 0.5) -> tuple[PolicyTable, PolicyTable]:
    return random_policy(space, concentration, seed), random_policy(space, concentration, seed + _PAIR_OFFSET)


def _random_logits_policy(space: BanditSpace, rng: np.random.Generator, scale: float = 1.0) -> PolicyTable:
    return PolicyTable.from_logits(scale * rng.normal(size=space.shape))


def _random_general_oracle(space: BanditSpace, rng: np.random.Generator) -> PreferenceOracle:
    upper = np.triu(rng.uniform(0.05, 0.95, size=(space.n_contexts, space.n_responses, space.n_responses)), k=1)
    table = upper + np.triu(1.0 - upper, k=1).transpose(0, 2, 1)
    idx = np.arange(space.n_responses)
    table[:, idx, idx] = 0.5
    return PreferenceOracle.general(table)


def _relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    scale = float(np.abs(expected).max())
    return float(np.abs(actual - expected).max()) / max(scale, 1e-12)


def _check_boundedness(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=5)
    rho = ContextDistribution.uniform(space.n_contexts)
    worst_value, worst_reward = -math.inf, -math.inf
    passed = True
    for i in range(1000):
        p_star, p = _pair(space, seeds[0] + i)
        for c in (0.125, 0.5, 2.0, 8.0):
            value = divergence(MixedChi2(c=c), p_star, p, rho)
            reward = optimal_mixed_chi2_reward(p_star, p, c).max_abs()
            passed &= -1e-12 <= value <= 1.0 / c + 1e-10 and reward <= 1.0 / c
            worst_value = max(worst_value, value * c)
            worst_reward = max(worst_reward, reward * c)
    return passed, f"max c*value={worst_value:.6f}, max c*|r*|={worst_reward:.6f} over 1000 pairs x 4 c"


def _check_variational_oracle(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=3)
    rho = ContextDistribution.uniform(space.n_contexts)
    reward_err, value_err = 0.0, 0.0
    for i in range(100):
        p_star, p = _pair(space, seeds[0] + 10_000 + i, concentration=1.0)
        c = (0.5, 2.0)[i % 2]
        brute, brute_value = brute_force_variational_max(p_star, p, rho, c)
        closed = optimal_mixed_chi2_reward(p_star, p, c)
        closed_value = variational_value(closed, p_star, p, rho, c)
        reward_err = max(reward_err, float(np.abs(brute.values - closed.values).max()))
        value_err = max(
            value_err,
            abs(brute_value - closed_value),
            abs(closed_value - divergence(MixedChi2(c=c), p_star, p, rho)),
        )
    passed = reward_err <= 1e-3 and value_err <= 1e-4
    return passed, f"max reward error {reward_err:.2e}, max value error {value_err:.2e} over 100 instances"


def _check_policy_lemmas(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=4)
    rng = make_rng(seeds[0])
    descent_slack, kl_slack = math.inf, math.inf
    for i in range(1000):
        p_star, p = _pair(space, seeds[0] + 20_000 + i, concentration=1.0)
        r_max = float(rng.uniform(0.1, 2.0))
        reward = RewardTable(rng.uniform(-r_max, r_max, size=space.shape), r_max)
        beta = float(np.exp(rng.uniform(math.log(0.1), math.log(100.0))))
        lhs, rhs = one_step_descent_check(p_star, p, reward, beta)
        descent_slack = min(descent_slack, rhs - lhs)
        kl_lhs, kl_rhs = kl_upper_check(p, reward, beta)
        kl_slack = min(kl_slack, float((kl_rhs - kl_lhs).min()))
    passed = descent_slack >= -1e-10 and kl_slack >= -1e-10
    return passed, f"min descent slack {descent_slack:.3e}, min KL-upper slack {kl_slack:.3e} over 1000 draws"


def _check_gap_rate(seeds: Sequence[int]) -> tuple[bool, str]:
    horizons = (16, 64, 256, 1024)
    r_max = 1.0
    exponents: list[float] = []
    min_gap = math.inf
    for seed in seeds:
        instance = default_instance(DEFAULT_SPACE, seed)
        gaps: list[tuple[int, float]] = []
        for horizon in horizons:
            schedule = sqrt_horizon_schedule(horizon, instance.p_star, instance.p_ref, instance.rho, r_max)
            config = GameConfig(
                iterations=horizon,
                beta=schedule.beta,
                r_max=r_max,
                regularizer=RegularizerSpec(psi=BoxRegularizer(r_max=r_max), bregman_weight=schedule.zeta),
            )
            history = run_selfplay(config, instance.p_star, instance.p_ref, instance.rho)
            gap = duality_gap(history, instance.p_star, instance.rho, r_max).gap
            min_gap = min(min_gap, gap)
            gaps.append((horizon, gap))
        try:
            exponents.append(rate_fit(gaps)[0])
        except ConvergedBelowToleranceError:
            exponents.append(math.inf)
    fast_enough = sum(e >= 0.35 for e in exponents)
    needed = len(seeds) - 1 if len(seeds) > 1 else 1
    passed = fast_enough >= needed and min_gap >= -1e-12
    shown = ", ".join(f"{e:.3f}" for e in exponents)
    return passed, f"exponents [{shown}], {fast_enough}/{len(seeds)} >= 0.35, min gap {min_gap:.3e}"


def _check_mapped_invariance(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=3, n_responses=5)
    worst = 0.0
    for i in range(20):
        instance = default_instance(space, seeds[0] + 30_000 + i, reference="dirichlet")
        regularizer = RegularizerSpec(psi=BoxRegularizer(r_max=1.0), bregman_weight=1.0)
        runs = [
            run_selfplay(
                GameConfig(iterations=20, beta=1.0, r_max=1.0, regularizer=regularizer, mode=mode),
                instance.p_star,
                instance.p_ref,
                instance.rho,
            )
            for mode in (GameMode.UNMAPPED, GameMode.MAPPED_DELTA_R)
        ]
        for a, b in zip(runs[0].policies, runs[1].policies, strict=True):
            worst = max(worst, float(np.abs(a.probs - b.probs).max()))
    return worst <= 1e-8, f"max policy difference {worst:.2e} over 20 instances x 20 iterations"


def _finite_difference(loss: Callable[[np.ndarray], float], logits: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(logits)
    for index in np.ndindex(logits.shape):
        shift = np.zeros_like(logits)
        shift[index] = h
        grad[index] = (loss(logits + shift) - loss(logits - shift)) / (2 * h)
    return grad


def _spif_loss_at(
    logits: np.ndarray, p_k: PolicyTable, p_star: PolicyTable, rho: ContextDistribution, spec: SpifLossSpec
) -> float:
    return spif_loss_exact(PolicyTable.from_logits(logits), p_k, p_star, rho, spec)


def _check_spif_gradient(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=3)
    rho = ContextDistribution.uniform(space.n_contexts)
    rng = make_rng(seeds[0] + 40_000)
    worst_rel = 0.0
    for i in range(100):
        logits = rng.normal(size=space.shape)
        p_k = _random_logits_policy(space, rng)
        p_star = _random_logits_policy(space, rng, scale=2.0)
        spec = SpifLossSpec(
            beta=float(rng.uniform(0.5, 2.0)),
            c=(0.5, 2.0)[i % 2],
            zeta=float(rng.uniform(0.0, 0.1)),
            regularizer_form=("union", "expert")[(i // 2) % 2],
        )
        loss = partial(_spif_loss_at, p_k=p_k, p_star=p_star, rho=rho, spec=spec)
        numeric = _finite_difference(loss, logits)
        analytic = spif_gradient(PolicyTable.from_logits(logits), p_k, p_star, rho, spec)
        worst_rel = max(worst_rel, _relative_error(analytic, numeric))

    single = BanditSpace(n_contexts=1, n_responses=2)
    single_rho = ContextDistribution.uniform(1)
    grid = np.linspace(1e-4, 1 - 1e-4, 9999)
    worst_tv = 0.0
    for i in range(5):
        p_star, p_k = _pair(single, seeds[0] + 41_000 + i, concentration=2.0)
        spec = SpifLossSpec(beta=1.0, c=2.0)
        history = spif_train(SpifConfig(iterations=1, loss=spec), p_star, p_k, single_rho, inner_steps=2000, lr=1.0)
        losses = [spif_loss_exact(PolicyTable(np.array([[q, 1 - q]])), p_k, p_star, single_rho, spec) for q in grid]
        best = float(grid[int(np.argmin(losses))])
        worst_tv = max(worst_tv, abs(float(history.policies[-1].probs[0, 0]) - best))
    passed = worst_rel <= 1e-4 and worst_tv <= 1e-3
    return passed, f"max gradient rel. error {worst_rel:.2e} on 100 instances, max 1x2 TV to grid {worst_tv:.2e}"


def _opening_range(history: TrainingHistory) -> float:
    opening = opening_norms((s.iteration, s.step, s.grad_inf_norm) for s in history.steps)
    return gradient_range(opening.values())


def _check_dynamics(seeds: Sequence[int]) -> tuple[bool, str]:
    instance = default_instance(DEFAULT_SPACE, seeds[0])
    c = 2.0
    spif = spif_train(
        SpifConfig(iterations=8, loss=SpifLossSpec(beta=1.0, c=c)),
        instance.p_star,
        instance.p_ref,
        instance.rho,
        inner_steps=200,
        lr=1.0,
    )
    spin = spin_train(instance.p_star, instance.p_ref, instance.rho, 1.0, 8, 200, 1.0)
    spif_max = spif.max_abs_dr()
    spin_early = max(
        [r.max_abs() for r in spin.reward_maps[:3]] + [s.max_abs_dr for s in spin.steps if s.iteration <= 3]
    )
    spif_range, spin_range = _opening_range(spif), _opening_range(spin)
    bounded = spif_max <= 1.0 / c + BOUNDED_REWARD_SLACK
    passed = bounded and spin_early > 1.0 and spif_range < spin_range
    return passed, (
        f"SPIF max|dr|={spif_max:.3f}, SPIN max|dr| in 3 iterations={spin_early:.3f}, "
        f"opening gradient range SPIF={spif_range:.3g} vs SPIN={spin_range:.3g}"
    )


def _check_spin_contraction(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=4)
    rho = ContextDistribution.uniform(space.n_contexts)
    worst_step, worst_envelope, one_step = -math.inf, -math.inf, 0.0
    for beta in (1.0, 2.0, 5.0, 10.0):
        for i in range(100):
            p_star, p_ref = _pair(space, seeds[0] + 50_000 + i, concentration=1.0)
            iterates = spin_exact_iterates(p_ref, p_star, beta, 20)
            checks = contraction_check_spin(iterates, p_star, beta, rho)
            worst_step = max(worst_step, max(lhs - rhs for _, lhs, rhs in checks))
            initial = divergence(KL(), p_star, p_ref, rho)
            factor = 1.0 - 1.0 / beta
            envelope = max(lhs - factor ** (k + 1) * initial for k, lhs, _ in checks)
            worst_envelope = max(worst_envelope, envelope)
            if beta == 1.0:
                one_step = max(one_step, checks[0][1])
    passed = worst_step <= 1e-10 and worst_envelope <= 1e-10 and one_step <= 1e-10
    return passed, (
        f"max step violation {worst_step:.2e}, max envelope violation {worst_envelope:.2e}, "
        f"KL after one step at beta=1 {one_step:.2e}"
    )


def _check_dpo_contraction(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=4)
    rng = make_rng(seeds[0] + 60_000)
    worst, invariance = -math.inf, 0.0
    for _ in range(100):
        latent = rng.normal(size=space.shape)
        oracle = PreferenceOracle.bradley_terry(latent)
        p_star = PolicyTable.from_logits(latent)
        p_ref = PolicyTable.uniform(*space.shape)
        iterates = iterative_dpo_iterates(p_ref, oracle, 25.0, 20)
        worst = max(worst, max(lhs - rhs for _, lhs, rhs in contraction_check_dpo(iterates, p_star)))
        steps = [iterative_dpo_step(p_ref, oracle, 25.0, y_ref=j).probs for j in range(space.n_responses)]
        invariance = max(invariance, max(float(np.abs(s - steps[0]).max()) for s in steps))
    passed = worst <= 1e-10 and invariance <= 1e-10
    return passed, f"max contraction violation {worst:.2e}, max y_ref spread {invariance:.2e} over 100 instances"


def _check_preference_equivalences(seeds: Sequence[int]) -> tuple[bool, str]:
    rng = make_rng(seeds[0] + 70_000)
    sppo_err, inpo_err = 0.0, 0.0
    for n_responses in (2, 3, 4):
        space = BanditSpace(n_contexts=2, n_responses=n_responses)
        rho = ContextDistribution.uniform(space.n_contexts)
        for _ in range(20):
            oracle = _random_general_oracle(space, rng)
            pi = _random_logits_policy(space, rng)
            p_k = _random_logits_policy(space, rng)
            beta = float(rng.uniform(0.5, 3.0))
            least_squares = sppo_gradient(pi, p_k, oracle, rho, beta)
            adversarial = chi2_ail_sppo_gradient(pi, p_k, oracle, rho, beta)
            sppo_err = max(sppo_err, _relative_error(-adversarial / beta**2, least_squares))

            eta = float(rng.uniform(0.5, 3.0))
            tau = eta * float(rng.uniform(0.1, 1.0))
            config = InpoConfig(eta=eta, tau=tau, p_ref=_random_logits_policy(space, rng))
            paired = inpo_gradient(pi, p_k, oracle, rho, config)
            displayed = inpo_displayed_gradient(pi, p_k, oracle, rho, config)
            inpo_err = max(inpo_err, _relative_error(displayed, paired))
    passed = sppo_err <= 1e-8 and inpo_err <= 1e-8
    return passed, f"SPPO rel. error {sppo_err:.2e}, INPO rel. error {inpo_err:.2e} on |Y| in 2..4"


def _check_linear_spin_tv(seeds: Sequence[int]) -> tuple[bool, str]:
    space = BanditSpace(n_contexts=2, n_responses=5)
    rho = ContextDistribution.uniform(space.n_contexts)
    rng = make_rng(seeds[0] + 80_000)
    worst = 0.0
    for i in range(1000):
        p_star, p_bar = _pair(space, seeds[0] + 80_000 + i)
        r_max = float(rng.uniform(0.1, 3.0))
        value = game_value(p_bar, sign_reward(p_star, p_bar, r_max), p_star, rho)
        worst = max(worst, abs(value - 2 * r_max * divergence(TV(), p_star, p_bar, rho)))
    return worst <= 1e-10, f"max |J - 2R TV| = {worst:.2e} over 1000 pairs"


def _final_tv(seed: int, c: float) -> float:
    instance = default_instance(DEFAULT_SPACE, seed)
    try:
        history = spif_train(
            SpifConfig(iterations=8, loss=SpifLossSpec(beta=1.0, c=c)),
            instance.p_star,
            instance.p_ref,
            instance.rho,
            inner_steps=200,
            lr=1.0,
        )
    except TrainingDivergenceError as exc:
        logger.warning("c=%g seed %d diverged: %s", c, seed, exc)
        return math.inf
    return divergence(TV(), instance.p_star, history.policies[-1], instance.rho)


def _check_c_ablation(seeds: Sequence[int]) -> tuple[bool, str]:
    small = statistics.median(_final_tv(seed, 2.0) for seed in seeds)
    large = statistics.median(_final_tv(seed, 0.125) for seed in seeds)
    return small <= large, f"median final TV c=2: {small:.4f}, c=0.125: {large:.4f} over {len(seeds)} seeds"


def _determinism_check(executor: Executor, tracer: Tracer) -> ClaimCheck:
    def check(seeds: Sequence[int]) -> tuple[bool, str]:
        contents: list[dict[str, bytes]] = []
        with tempfile.TemporaryDirectory(prefix="selfplay-ail-verify-") as root:
            for attempt in ("first", "second"):
                out_dir = Path(root) / attempt
                config = validate_run_config({
                    "kind": "spif",
                    "seeds": list(seeds[:2]),
                    "out_dir": str(out_dir),
                    "spif": {"iterations": 2, "inner_steps": 20},
                })
                run(config, executor=executor, tracer=tracer)
                contents.append({p.name: p.read_bytes() for p in sorted(out_dir.glob("*.csv"))})
        identical = bool(contents[0]) and contents[0] == contents[1]
        return identical, f"{len(contents[0])} CSV file(s) compared byte for byte"

    return check


CLAIM_TITLES: dict[int, str] = {
    1: "Mixed chi-square divergence and optimal reward are bounded by 1/c",
    2: "Grid-search variational maximum matches the closed form",
    3: "One-step descent and KL upper bound hold",
    4: "Duality gap decays as 1/sqrt(K)",
    5: "Mapped and unmapped policy players coincide",
    6: "SPIF gradients match finite differences and grid minimizers",
    7: "SPIF reward stays bounded while SPIN's grows",
    8: "Exact SPIN contracts KL geometrically",
    9: "Iterative DPO contracts KL and ignores the reference response",
    10: "SPPO and INPO gradients match their adversarial counterparts",
    11: "Linear SPIN attains twice R_max times total variation",
    12: "Smaller reward magnitude converges at least as well",
    13: "Runs are byte-for-byte deterministic",
}

_CHECKS: dict[int, ClaimCheck] = {
    1: _check_boundedness,
    2: _check_variational_oracle,
    3: _check_policy_lemmas,
    4: _check_gap_rate,
    5: _check_mapped_invariance,
    6: _check_spif_gradient,
    7: _check_dynamics,
    8: _check_spin_contraction,
    9: _check_dpo_contraction,
    10: _check_preference_equivalences,
    11: _check_linear_spin_tv,
    12: _check_c_ablation,
}


@inject
def verify(
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    claims: Sequence[int] | None = None,
    executor: Executor = Provide["executor"],
    tracer: Tracer = Provide["tracer"],
) -> list[ClaimResult]:
    """
    Run the property suite.

    Parameters
    ----------
    seeds : sequence of int
        Seeds of the multi-seed claims; the first one also seeds the random draws.
    claims : sequence of int, optional
        Claim numbers to run; all of them when omitted.
    executor : Executor
        Pool used by the determinism claim (injected).
    tracer : Tracer
        Tracer receiving one span per claim (injected).

    Returns
    -------
    list[ClaimResult]
        One result per claim, in claim order.
    """
    if not seeds:
        raise ValueError("verify needs at least one seed")
    checks = dict(_CHECKS)
    checks[13] = _determinism_check(executor, tracer)
    selected = sorted(claims) if claims is not None else sorted(checks)

    results: list[ClaimResult] = []
    for number in selected:
        title = CLAIM_TITLES[number]
        started = time.perf_counter()
        with tracer.start_as_current_span("selfplay_ail.verify.claim") as span:
            span.set_attribute("claim.number", number)
            try:
                passed, detail = checks[number](seeds)
            except (SelfPlayError, OSError) as exc:
                logger.exception("Claim %d raised", number)
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            span.set_attribute("claim.passed", passed)
        seconds = time.perf_counter() - started
        logger.info("Claim %d %s in %.1fs: %s", number, "passed" if passed else "FAILED", seconds, detail)
        results.append(ClaimResult(number=number, title=title, passed=passed, detail=detail, seconds=seconds))
    return results
