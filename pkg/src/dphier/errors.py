"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/parameter problems -> 1,
bad input data or artifacts -> 2, numeric failures -> 3.
"""


class DphierError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(DphierError, ValueError):
    """A parameter violates its documented precondition."""


class InputDataError(DphierError, ValueError):
    """Input data or a released artifact is malformed or inconsistent."""


class GenerationError(InputDataError):
    """Synthetic-sequence generation cannot proceed (e.g. empty root histogram)."""


class QuadratureError(DphierError, ArithmeticError):
    """Adaptive quadrature failed to converge to the requested accuracy."""
