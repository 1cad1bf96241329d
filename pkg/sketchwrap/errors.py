"""
Exception hierarchy for sketchwrap.
"""
from typing import Any, Optional


class SketchwrapError(Exception):
    """Base class for all sketchwrap failures."""


class DomainError(SketchwrapError, ValueError):
    """A spline or station query fell outside the valid range."""


class SketchError(SketchwrapError, ValueError):
    """A sketch violates its structural invariants."""


class FitError(SketchwrapError):
    """Baseline least squares could not be solved."""


class InfeasibleBounds(SketchwrapError):
    """Longitudinal bounds cross (p_lower > p_upper)."""


class SingularOffset(SketchwrapError):
    """The lateral offset reached the center of curvature (1 - n*kappa too small)."""


class NoPath(SketchwrapError):
    """Grid search exhausted its open set."""


class SolverFailed(SketchwrapError):
    """
    The MPC did not produce a usable plan.

    Attributes:
        solution: Best iterate as an MpcSolution (may be None)
        violation: Max constraint violation of that iterate
    """

    def __init__(self, message: str, solution: Optional[Any] = None, violation: float = float('inf')):
        super().__init__(message)
        self.solution = solution
        self.violation = violation
