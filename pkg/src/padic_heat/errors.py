"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
2 for invalid configuration, 3 for violated preconditions, 4 for numerical
failures (a certified bound could not be met).
"""


class PadicHeatError(Exception):
    exit_code = 4


class ConfigInvalid(PadicHeatError, ValueError):
    exit_code = 2


class PreconditionError(PadicHeatError, ValueError):
    exit_code = 3


class NonOddPrime(PreconditionError):
    pass


class ZeroDenominator(PreconditionError, ZeroDivisionError):
    pass


class GammaOutOfRange(PreconditionError):
    pass


class DomainViolation(PreconditionError):
    pass


class HypothesisViolation(PreconditionError):
    pass


class CosetResolutionTooCoarse(PreconditionError):
    pass


class InsufficientPrecision(PadicHeatError, ArithmeticError):
    pass


class CertificationFailed(PadicHeatError):
    pass


class SeriesNotConverged(PadicHeatError):
    pass


class TailNotControlled(PadicHeatError):
    pass


class QuadratureBudgetExceeded(PadicHeatError):
    pass


class IterationDiverged(PadicHeatError):
    pass


class RejectionBudgetExceeded(PadicHeatError):
    pass
