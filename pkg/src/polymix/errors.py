"""Exception types shared across polymix."""


class PolymixError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(PolymixError, ValueError):
    """A caller-supplied value is outside the accepted domain."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class DimensionMismatch(InvalidArgument):
    """Array shapes disagree; ``axis`` names the offending dimension."""

    def __init__(self, message, axis):
        super().__init__(message, parameter=axis)
        self.axis = axis


class SolverError(PolymixError):
    """A linear or eigen solve failed or produced an unacceptable residual."""

    def __init__(self, message, condition=None, residual=None):
        super().__init__(message)
        self.condition = condition
        self.residual = residual


class ConvergenceError(PolymixError):
    """An iterative procedure hit its budget before meeting its threshold.

    ``last_value`` carries the final monitored quantity (TV distance, span
    seminorm, residual, ...) and ``iterations`` the budget that was spent.
    """

    def __init__(self, message, last_value=None, iterations=None):
        super().__init__(message)
        self.last_value = last_value
        self.iterations = iterations


class DegenerateRegion(PolymixError):
    """A state region has (numerically) zero stationary mass or no visits."""


class AgentFailure(PolymixError):
    """An agent raised during a run; ``step`` is the step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
