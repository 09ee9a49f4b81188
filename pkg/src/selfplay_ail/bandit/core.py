# Copyright (c) Microsoft. All rights reserved.

"""
Contextual-bandit primitives: random policies, exact expectations and sampling.

All functions are pure given their seed.
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from selfplay_ail.errors import ContextIndexError, DimensionError, InvalidParameterError
from selfplay_ail.models.tables import (
    BanditSpace,
    ContextDistribution,
    FloatArray,
    PolicyTable,
    RewardTable,
    as_array,
    make_rng,
)

__all__ = [
    "BanditInstance",
    "check_same_shape",
    "default_instance",
    "expected_value",
    "random_policy",
    "sample_pairs",
    "sample_response",
    "sample_responses",
]


def check_same_shape(*tables: PolicyTable | RewardTable | FloatArray) -> tuple[int, int]:
    """
    Verify that every table has the same ``(n_contexts, n_responses)`` shape.

    Raises
    ------
    DimensionError
        If any two shapes differ.
    """
    shapes = {tuple(as_array(t).shape) for t in tables}
    if len(shapes) != 1:
        raise DimensionError(f"table shapes disagree: {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 2:
        raise DimensionError(f"expected matrices, got shape {shape}")
    return (int(shape[0]), int(shape[1]))


def random_policy(space: BanditSpace, concentration: float, seed: int) -> PolicyTable:
    """
    Draw a policy whose rows follow a symmetric Dirichlet distribution.

    Parameters
    ----------
    space : BanditSpace
        Table dimensions.
    concentration : float
        Dirichlet concentration; large values approach the uniform policy.
    seed : int
        Seed of the draw.

    Returns
    -------
    PolicyTable
        Floored, row-normalized policy.
    """
    if not concentration > 0 or not math.isfinite(concentration):
        raise InvalidParameterError(f"concentration must be positive, got {concentration}")
    rng = make_rng(seed)
    rows = rng.dirichlet(np.full(space.n_responses, concentration), size=space.n_contexts)
    rows = rows / rows.sum(axis=1, keepdims=True)
    return PolicyTable(rows)


def expected_value(
    rho: ContextDistribution,
    pi: PolicyTable | ArrayLike,
    f: RewardTable | ArrayLike,
) -> float:
    """
    Exact expectation ``sum_x rho(x) sum_y pi(y|x) f(x, y)``.

    Contexts are summed in the outer loop and responses in the inner loop,
    both with ``math.fsum``. ``pi`` may be a raw matrix, which lets callers
    evaluate deterministic (one-hot) policies that bypass the probability
    floor.
    """
    pi_values = as_array(pi)
    f_values = as_array(f)
    check_same_shape(pi_values, f_values)
    if pi_values.shape[0] != rho.n_contexts:
        raise DimensionError(f"rho has {rho.n_contexts} contexts, tables have {pi_values.shape[0]}")
    inner = [math.fsum(row) for row in pi_values * f_values]
    return math.fsum(weight * value for weight, value in zip(rho.probs, inner, strict=True))


def sample_responses(pi: PolicyTable, x: int, size: int, seed: int) -> np.ndarray:
    """Draw ``size`` responses from ``pi(.|x)``."""
    if not 0 <= x < pi.n_contexts:
        raise ContextIndexError(f"context {x} outside [0, {pi.n_contexts})")
    if size < 1:
        raise InvalidParameterError(f"size must be positive, got {size}")
    rng = make_rng(seed)
    return rng.choice(pi.n_responses, size=size, p=pi.probs[x])


def sample_response(pi: PolicyTable, x: int, seed: int) -> int:
    """Draw a single response ``y ~ pi(.|x)``."""
    return int(sample_responses(pi, x, 1, seed)[0])


def sample_pairs(rho: ContextDistribution, pi: PolicyTable, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw ``n`` (context, response) pairs with ``x ~ rho`` and ``y ~ pi(.|x)``.

    Returns
    -------
    numpy.ndarray
        Integer array of shape ``(n, 2)``.
    """
    if n < 1:
        raise InvalidParameterError(f"sample size must be positive, got {n}")
    contexts = rng.choice(rho.n_contexts, size=n, p=rho.probs)
    # Inverse-CDF per row keeps one uniform draw per pair.
    cdf = np.cumsum(pi.probs, axis=1)
    u = rng.random(n) * cdf[contexts, -1]
    responses = (u[:, None] >= cdf[contexts]).sum(axis=1)
    responses = np.minimum(responses, pi.n_responses - 1)
    return np.stack([contexts, responses], axis=1).astype(np.int64)


@dataclass(frozen=True)
class BanditInstance:
    """
    A complete problem instance: space, prompt distribution, expert and reference.

    Attributes
    ----------
    space : BanditSpace
        Table dimensions.
    rho : ContextDistribution
        Prompt distribution.
    p_star : PolicyTable
        Expert policy.
    p_ref : PolicyTable
        Reference (initial) policy.
    """

    space: BanditSpace
    rho: ContextDistribution
    p_star: PolicyTable
    p_ref: PolicyTable

    def fingerprint(self) -> str:
        """Stable sha256 digest of the instance tables."""
        digest = hashlib.sha256()
        digest.update(np.asarray(self.space.shape, dtype=np.int64).tobytes())
        for array in (self.rho.probs, self.p_star.probs, self.p_ref.probs):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


def default_instance(
    space: BanditSpace,
    seed: int,
    expert_concentration: float = 0.5,
    reference: Literal["uniform", "dirichlet"] = "uniform",
    reference_concentration: float = 1.0,
) -> BanditInstance:
    """
    Build the desk-scale instance used by experiments.

    The expert is drawn from a symmetric Dirichlet, rho is uniform and the
    reference policy is uniform unless a Dirichlet reference is requested
    (drawn from the next seed so it is independent of the expert).
    """
    p_star = random_policy(space, expert_concentration, seed)
    if reference == "uniform":
        p_ref = PolicyTable.uniform(space.n_contexts, space.n_responses)
    else:
        p_ref = random_policy(space, reference_concentration, (seed + 1) % 2**64)
    return BanditInstance(
        space=space,
        rho=ContextDistribution.uniform(space.n_contexts),
        p_star=p_star,
        p_ref=p_ref,
    )
