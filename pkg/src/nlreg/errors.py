"""Exception hierarchy shared by every module."""


class NlregError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(NlregError, ValueError):
    pass


class UnsupportedDimensionError(NlregError, ValueError):
    pass


class UnsupportedTailError(NlregError, ValueError):
    pass


class EmptyRegionError(NlregError, ValueError):
    pass


class IncompatibleGridError(NlregError, ValueError):
    pass


class InvalidKernelError(NlregError, ValueError):
    pass


class QuadratureError(NlregError, ArithmeticError):
    pass


class ClassViolationError(NlregError, ValueError):
    """Raised when an operation would leave the ellipticity class."""


class ResolutionError(NlregError, ValueError):
    """The requested scale is not resolved by the grid; refine ``h``."""


class StencilError(NlregError, ValueError):
    pass


class SchemeError(NlregError, ArithmeticError):
    """The discretization lost monotonicity."""


class PreconditionError(NlregError, ValueError):
    pass


class NumericError(NlregError, ArithmeticError):
    pass


class EmptyFamilyError(NlregError, ValueError):
    pass


class InsufficientDataError(NlregError, ValueError):
    pass


class NonconvergenceError(NlregError, RuntimeError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class ReductionError(NlregError, RuntimeError):
    def __init__(self, message, worst_point=None, gap=None):
        super().__init__(message)
        self.worst_point = worst_point
        self.gap = gap


class StageError(NlregError, RuntimeError):
    """Wraps a failure inside a pipeline stage, tagging it with the stage and epsilon."""

    def __init__(self, stage, epsilon, cause):
        eps = "" if epsilon is None else f" (epsilon={epsilon:g})"
        super().__init__(f"stage '{stage}'{eps} failed: {cause}")
        self.stage = stage
        self.epsilon = epsilon
        self.cause = cause
