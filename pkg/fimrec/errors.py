"""Exception hierarchy shared by the library and the command line."""


class FimError(Exception):
    """Base class for expected failures; carries the process exit code."""

    exit_code = 1


class ConfigError(FimError):
    """A configuration file, key, or override is invalid."""

    exit_code = 1


class DataError(FimError, ValueError):
    """A dataset file is missing, malformed, or inconsistent."""

    exit_code = 2


class NumericError(FimError, ArithmeticError):
    """A loss went non-finite or a gradient check exceeded its tolerance."""

    exit_code = 3
