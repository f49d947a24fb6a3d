"""Exception hierarchy.

Two families: ``UserError`` for malformed input (CLI exit code 1) and
``NumericalError`` for failures of a numerical routine (exit code 2).
"""


class SlsSynthError(Exception):
    """Base class for all package errors."""


class UserError(SlsSynthError):
    pass


class NumericalError(SlsSynthError):
    pass


class SpecError(UserError):
    """Problem specification is malformed or fails validation."""


class ShapeError(UserError):
    pass


class InvalidEnvelope(UserError):
    pass


class OracleTooLarge(UserError):
    pass


class IntegrationDiverged(NumericalError):
    pass


class LinearizationFailed(NumericalError):
    pass


class GainRecoveryFailed(NumericalError):
    pass


class RiccatiSingular(NumericalError):
    pass


class KalmanSingular(NumericalError):
    pass


class OracleFailed(NumericalError):
    pass


class SynthesisInfeasible(NumericalError):
    pass


class InitialGuessFailed(NumericalError):
    pass


class QpMaxIter(NumericalError):
    pass


class QpInfeasible(NumericalError):
    pass


class RolloutDiverged(NumericalError):
    pass


class FitUnbounded(NumericalError):
    pass
