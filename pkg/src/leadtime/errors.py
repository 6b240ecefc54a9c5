"""Exception types; the CLI maps each to its own exit code."""


class LeadTimeError(Exception):
    pass


class ConfigError(LeadTimeError, ValueError):
    """Bad command line, config key or config value (exit code 1)."""


class DataError(LeadTimeError, ValueError):
    """Unreadable, malformed or unusable data (exit code 2)."""


class NumericalError(LeadTimeError, ArithmeticError):
    """A fit produced non-finite values or a factorisation failed (exit code 3)."""
