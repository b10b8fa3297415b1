"""Exception types raised across the package."""


class BemapError(Exception):
    """Base class for all package errors."""


class ValidationError(BemapError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """A data file could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class UndefinedMetricError(BemapError, ValueError):
    """A metric is undefined for the given inputs (e.g. an empty group)."""
