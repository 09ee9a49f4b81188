# Copyright (c) Microsoft. All rights reserved.

"""
Exception hierarchy for the self-play lab.

Every error raised by library code derives from :class:`SelfPlayError` and
from the builtin exception matching its category, so callers can catch
either ``SelfPlayError`` or e.g. ``ValueError``.
"""

__all__ = [
    "ComparisonError",
    "ConfigValidationError",
    "ContextIndexError",
    "ContractionRegimeWarning",
    "ConvergedBelowToleranceError",
    "DimensionError",
    "DomainError",
    "InvalidParameterError",
    "MissingLogitsError",
    "NumericalDegeneracyError",
    "SelfPlayError",
    "TrainingDivergenceError",
    "UnsupportedOracleError",
]


class SelfPlayError(Exception):
    """Base class for all errors raised by ``selfplay_ail``."""


class InvalidParameterError(SelfPlayError, ValueError):
    """A scalar hyperparameter is outside its admissible range."""


class MissingLogitsError(InvalidParameterError):
    """A gradient was requested for a policy table that carries no logits."""


class DimensionError(SelfPlayError, ValueError):
    """Two tables that must share a shape do not."""


class ContextIndexError(SelfPlayError, IndexError):
    """A context index lies outside the bandit space."""


class DomainError(SelfPlayError, ValueError):
    """A value lies outside the domain an operation is defined on."""


class ConvergedBelowToleranceError(DomainError):
    """
    A quantity that should be strictly positive reached zero.

    Raised by rate fitting when a duality gap collapsed to (or below) zero,
    which means the run converged below numerical tolerance rather than
    producing an invalid measurement.
    """


class NumericalDegeneracyError(SelfPlayError, ArithmeticError):
    """A normalization produced non-finite values."""


class TrainingDivergenceError(SelfPlayError, ArithmeticError):
    """
    An inner optimization loop produced a non-finite loss.

    Parameters
    ----------
    iteration : int
        Self-play iteration (1-based) at which the loss diverged.
    message : str
        Human readable description.
    """

    def __init__(self, iteration: int, message: str) -> None:
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class UnsupportedOracleError(SelfPlayError, TypeError):
    """The preference oracle kind is not supported by the requested update."""


class ComparisonError(SelfPlayError, ValueError):
    """Two artifacts were produced on different bandit instances."""


class ConfigValidationError(SelfPlayError, ValueError):
    """
    A run configuration failed validation.

    Parameters
    ----------
    violations : list[str]
        Every violation found, one entry per problem.
    """

    def __init__(self, violations: list[str]) -> None:
        self.violations = list(violations)
        joined = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"invalid run configuration ({len(self.violations)} problem(s)):\n{joined}")


class ContractionRegimeWarning(UserWarning):
    """An update was requested outside the regime where its contraction guarantee holds."""
