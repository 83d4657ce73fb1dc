"""Exception hierarchy shared across the toolkit."""


class RulError(Exception):
    """Base class for every error raised by rulforge."""


# data-core
class ConstantSeries(RulError, ValueError):
    pass


class InvalidKnee(RulError, ValueError):
    pass


class TooShort(RulError, ValueError):
    pass


class ParseError(RulError, ValueError):
    pass


class NonPositiveResistance(ParseError):
    pass


class NonMonotoneCycles(ParseError):
    pass


# pattern-clustering
class EmptySeries(RulError, ValueError):
    pass


class BandInfeasible(RulError, ValueError):
    pass


class KTooLarge(RulError, ValueError):
    pass


class ModelNotFitted(RulError, RuntimeError):
    pass


# feature-engineering
class DegenerateWindow(RulError, ArithmeticError):
    def __init__(self, message, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class DimensionMismatch(RulError, ValueError):
    pass


class PoleInDomain(RulError, ValueError):
    pass


class InsufficientData(RulError, ValueError):
    pass


class NonConvergence(RulError, RuntimeError):
    """Raised when no multi-start run converged; ``best`` holds the best-so-far fit."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# neural-core
class ShapeMismatch(RulError, ValueError):
    pass


class InvalidShape(RulError, ValueError):
    pass


class NonFiniteError(RulError, FloatingPointError):
    pass


class NonFiniteGradient(NonFiniteError):
    pass


# rul-pipeline
class LengthMismatch(RulError, ValueError):
    pass


class InsufficientSeries(RulError, ValueError):
    pass
