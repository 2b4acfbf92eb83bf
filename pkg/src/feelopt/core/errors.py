"""
Exception hierarchy shared by the simulator, the fitter and the optimizer.

Every error carries the process exit code the command line interface reports
when it escapes a verb.
"""

from typing import Any, Optional


class FeelError(Exception):
    """Base class for all feelopt errors."""

    exit_code = 1


class InvalidInputError(FeelError, ValueError):
    """Raised for non-finite data, non-positive physical quantities or bad shapes."""

    exit_code = 2


class ConfigError(FeelError):
    """Raised when a scenario configuration cannot be parsed or validated."""

    exit_code = 2


class RateBracketError(InvalidInputError):
    """Raised when a bandwidth bracket does not straddle the requested rate."""


class InfeasibleInstanceError(FeelError):
    """Raised when no bandwidth allocation meets the total bandwidth budget."""

    exit_code = 3


class FitError(FeelError):
    """Raised when the optimality-gap model cannot be fitted."""

    exit_code = 4


class DegenerateTraceError(FitError):
    """Raised when a loss trace gives a singular regression."""


class InfeasibleZError(FitError):
    """Raised when a candidate Z is not strictly below every loss sample."""


class NonConvergenceError(FeelError):
    """Raised when an iterative solver hits its iteration cap."""

    exit_code = 5

    def __init__(self, message: str, last_iterate: Optional[Any] = None) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate


class TrainingDivergedError(FeelError):
    """Raised when the simulated training loss blows up."""

    exit_code = 5

    def __init__(self, message: str, round_index: int = 0) -> None:
        super().__init__(message)
        self.round_index = round_index
