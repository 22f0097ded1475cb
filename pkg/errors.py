"""Exception hierarchy shared by the toolkit modules."""


class FmtlError(Exception):
    """Base class for toolkit errors."""


class ConfigError(FmtlError, ValueError):
    """Invalid configuration, override or rule name."""


class NumericalError(FmtlError, ArithmeticError):
    """A numerical procedure failed (maps to CLI exit code 2)."""


class CholeskyError(NumericalError):
    pass


class DiagonalizationError(NumericalError):
    pass


class RankDegeneracyError(NumericalError):
    """Raised when a fixed-rank iterate loses rank."""


class ConvergenceError(NumericalError):
    pass
