"""Exception hierarchy shared across modules.

The CLI maps ``UsageError`` and ``ConfigurationError`` to exit code 2 and
``DataError`` (and anything else) to exit code 1.
"""


class PalsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PalsError, ValueError):
    """Invalid tunable or inconsistent configuration."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class UsageError(PalsError, ValueError):
    """API called outside its contract (bad shapes, duplicate ids, ...)."""


class DataError(PalsError):
    """Input data violates its format or validation rules."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class OracleError(PalsError):
    """The label source failed (timeout, decline, crash)."""


class RunAborted(PalsError):
    """A training loop stopped early; ``log`` holds what was recorded."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log if log is not None else []
