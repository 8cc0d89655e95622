"""Exception hierarchy shared by every module."""


class FaceFitError(Exception):
    """Base class for all library errors."""


class InvalidInputError(FaceFitError, ValueError):
    pass


class InvalidConfigError(FaceFitError, ValueError):
    pass


class DegenerateWindowError(FaceFitError, ArithmeticError):
    """Quaternion moving average collapsed (antipodal cancellation)."""


class UndefinedMetricError(FaceFitError, ValueError):
    pass


class DivergenceError(FaceFitError, ArithmeticError):
    """Objective became non-finite during optimization."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"objective diverged at iteration {iteration}")


class InvariantViolation(FaceFitError, RuntimeError):
    pass
