"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs (CLI exit code 1); everything
else deriving from ``BarronICLError`` is a runtime failure (exit code 2).
"""


class BarronICLError(Exception):
    pass


class ValidationError(BarronICLError, ValueError):
    pass


class DegenerateMeasure(ValidationError):
    """The class has no Fourier mass away from the origin, so the sampling law is undefined."""


class UnsupportedClass(ValidationError):
    pass


class InputOutsideBall(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class NegativeThreshold(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class InvalidDepth(ValidationError):
    pass


class NonPositiveTau(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ColumnInconsistency(BarronICLError):
    pass


class TraceMissing(BarronICLError):
    pass


class NoConvergence(BarronICLError):
    def __init__(self, message, max_iter=None, tol=None):
        super().__init__(message)
        self.max_iter = max_iter
        self.tol = tol
