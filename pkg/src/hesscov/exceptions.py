"""Exception hierarchy."""


class HesscovError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(HesscovError, ValueError):
    """Arguments with inconsistent shapes."""


class NumericError(HesscovError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class SingularMatrixError(HesscovError, ArithmeticError):
    """A matrix that must be inverted is (numerically) singular."""


class DefinitenessError(HesscovError, ArithmeticError):
    """A variance or covariance entry has the wrong sign."""


class SpecError(HesscovError, ValueError):
    """Malformed estimation problem specification."""


class BlowUpError(HesscovError, ArithmeticError):
    """A simulation produced non-finite states."""


class ConfigError(HesscovError, ValueError):
    """Invalid configuration file or key."""
