"""Exception hierarchy shared by the library and the command line."""


class BdsdeError(Exception):
    """Base class for all library errors."""


class ConfigurationError(BdsdeError, ValueError):
    """Invalid grid, level or run configuration."""


class LevelError(ConfigurationError):
    """Requested dyadic level is not available on the path."""


class DomainError(BdsdeError, ValueError):
    """Time argument outside [0, T]."""


class InputError(BdsdeError, ValueError):
    """Empty or inconsistent input collection."""


class CapabilityError(BdsdeError):
    """The problem lacks an optional capability (e.g. a closed form)."""


class NumericalError(BdsdeError, ArithmeticError):
    """A computation produced an unusable numerical result."""


class RegressionError(NumericalError):
    """Least-squares regression is rank deficient or underdetermined."""


class NumericalBlowupError(NumericalError):
    """Non-finite values appeared during a backward solve."""


class RateUndefinedError(NumericalError):
    """A convergence rate cannot be fitted from the given estimates."""
