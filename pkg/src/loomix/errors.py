"""Exception hierarchy; each class maps onto one CLI exit code."""


class LoomixError(Exception):
    exit_code = 1


class ConfigError(LoomixError, ValueError):
    exit_code = 2


class InputError(LoomixError, ValueError):
    """Invalid arguments handed to a library call."""

    exit_code = 2


class DataError(LoomixError, ValueError):
    """Malformed or inconsistent dataset."""

    exit_code = 3


class NumericalError(LoomixError, ArithmeticError):
    """Singular factorizations, improper LOO posteriors, non-finite densities."""

    exit_code = 4
