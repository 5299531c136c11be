"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Raised when contributions, weights or identifiers violate a precondition."""


class ConfigError(ValueError):
    """Raised for an inconsistent or unknown round configuration."""


class GroupFileError(InvalidInputError):
    """Parse or validation failure in a groups document.

    ``line`` is the 1-based line of the offending entry when the source was text.
    """

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class DegeneratePopulationError(ValueError):
    """The welfare optimum is F* = 0, so an approximation ratio is undefined."""


class SweepError(RuntimeError):
    """A sweep cell excluded too many non-convergent trials."""
