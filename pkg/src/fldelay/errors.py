"""Exception hierarchy shared by all modules."""


class FLDelayError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(FLDelayError, ValueError):
    pass


class DivergenceError(FLDelayError, FloatingPointError):
    """Training produced a non-finite loss, gradient or parameter."""


class InfeasibleError(FLDelayError):
    """The convergence target cannot be met.

    ``constraint`` names the binding constraint when it is known.
    """

    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


class SolverError(FLDelayError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NeedMoreSamplesError(FLDelayError):
    """The coefficient fit is rank deficient or otherwise unidentifiable."""


class BudgetExceededError(FLDelayError):
    pass


class ConfigurationError(FLDelayError):
    pass
