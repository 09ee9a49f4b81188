# Copyright (c) Microsoft. All rights reserved.

"""
Shared constants for the selfplay-ail package.

This module contains numerical tolerances and artifact names used across
multiple modules to avoid duplication and ensure consistency.
"""

from typing import Final

# Policy rows are clamped to at least this probability and renormalized,
# so every log-ratio stays finite.
PROB_FLOOR: Final[float] = 1e-12

# Tolerance for the row-sum and context-distribution checks.
SUM_TOLERANCE: Final[float] = 1e-12

# Maximum deviation between stored probabilities and softmax(logits).
LOGIT_TOLERANCE: Final[float] = 1e-10

# Slack accepted when checking a reward table against its box.
BOX_TOLERANCE: Final[float] = 1e-12

# Default resolution of the brute-force variational oracle.
DEFAULT_GRID_STEP: Final[float] = 1e-4

# Slack on top of 1/c when judging whether a mapped reward stayed bounded.
BOUNDED_REWARD_SLACK: Final[float] = 0.05

# Inner gradient steps skipped before measuring gradient-norm ranges.
GRADIENT_WARMUP_STEPS: Final[int] = 10

# Artifact file suffixes written next to each per-run CSV.
STEPS_SUFFIX: Final[str] = ".steps.csv"
META_SUFFIX: Final[str] = ".meta.json"
SUMMARY_FILENAME: Final[str] = "summary.json"

# Rich styles for verification output.
STATUS_STYLES: dict[bool, str] = {
    True: "bold green",
    False: "bold red",
}
