"""Exception types shared across the package."""


class QsrNetError(Exception):
    """Base class for all package errors."""


class InvalidArgument(QsrNetError, ValueError):
    pass


class NumericalFailure(QsrNetError, ArithmeticError):
    pass


class SingularMatrix(NumericalFailure):
    pass


class NotStabilizable(NumericalFailure):
    pass


class NotApplicable(QsrNetError):
    """The certificate conditions cannot apply (e.g. some mode has Q not negative definite)."""


class InvalidEpsilon(InvalidArgument):
    pass


class DivergenceDetected(QsrNetError):
    """Simulation state norm exceeded the divergence threshold.

    The partial trajectory up to the offending sample is attached as ``record``.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
