"""Exception and warning types shared across the package."""


class JointpoError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(JointpoError):
    """Input data or configuration violates a documented precondition."""


class ParseError(ValidationError):
    """A tabular input stream could not be parsed.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SchemaError(ValidationError):
    """The input's column layout does not match the requested analysis."""


class EstimationError(ValidationError):
    """A required empirical frequency is undefined (e.g. an empty arm)."""


class IdentificationError(JointpoError):
    """A rank or trial-count condition needed for identification fails."""


class InferenceError(JointpoError):
    """Resampling-based inference could not be completed."""


class JointpoWarning(UserWarning):
    """Base class for warnings emitted by this package."""


class OutOfRangeWarning(JointpoWarning):
    """An estimated probability landed outside [0, 1]."""


class MonotonicityWarning(JointpoWarning):
    """Empirical frequencies contradict an assumed monotone ordering."""


class ForcedSolveWarning(JointpoWarning):
    """A least-squares solve was forced despite failed rank diagnostics."""
