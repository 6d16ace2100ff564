"""Exception hierarchy shared by all modules.

``ConfigError`` and ``MissingSamples`` map to CLI exit code 2; every
``NumericalError`` maps to exit code 3.
"""


class MaxIdError(Exception):
    """Base class for all package errors."""


class ConfigError(MaxIdError, ValueError):
    pass


class MissingSamples(ConfigError):
    pass


class DomainError(MaxIdError, ValueError):
    pass


class NumericalError(MaxIdError):
    pass


class NonIntegrableEnvelope(NumericalError):
    pass


class ConcavityViolation(NumericalError):
    pass


class InvalidInit(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class TabulationRangeExceeded(NumericalError):
    pass


class IterationCap(NumericalError):
    pass


class DegenerateLevel(NumericalError):
    pass
