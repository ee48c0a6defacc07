"""Exception types shared across the package."""


class PsoTrustError(Exception):
    """Base class for all errors raised by psotrust."""


class DomainError(PsoTrustError, ValueError):
    """A value lies outside the domain an operation accepts."""


class EmptySwarmError(PsoTrustError, ValueError):
    """An operation that needs at least one particle got none."""


class EmptyInputError(PsoTrustError, ValueError):
    """aggregate() was called without any recommendation."""


class ConfigError(PsoTrustError, ValueError):
    """Invalid simulation or scenario configuration.

    ``key`` names the offending configuration key when one is known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class FormatError(PsoTrustError, ValueError):
    """A text file could not be parsed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
