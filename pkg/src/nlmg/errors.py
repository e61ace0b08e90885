"""Exception types shared across the package."""

from __future__ import annotations


class ParamError(ValueError):
    """Invalid parameter set (dimension, exponent, grid shape, spec field)."""


class DomainError(ValueError):
    """Input is structurally valid but outside an operation's domain."""


class BudgetError(RuntimeError):
    """A quadrature accuracy budget cannot be met within the allowed radius.

    Attributes
    ----------
    required_far_radius : float or None
        Far-field radius that would satisfy the requested tail budget.
    """

    def __init__(self, message: str, required_far_radius: float | None = None):
        super().__init__(message)
        self.required_far_radius = required_far_radius


class StepFailure(RuntimeError):
    """Line search hit the step-size floor without an acceptable decrease.

    Attributes
    ----------
    iteration : int
        Iteration at which the search failed.
    step_size : float
        Step size at the floor.
    """

    def __init__(self, message: str, iteration: int = -1, step_size: float = 0.0):
        super().__init__(message)
        self.iteration = iteration
        self.step_size = step_size
