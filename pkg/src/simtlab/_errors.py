"""Shared exception types.

The CLI maps these onto process exit codes (usage -> 1, data -> 2,
numeric -> 3); library callers can catch them individually.
"""


class SimtlabError(Exception):
    """Base class for all package errors."""


class UsageError(SimtlabError):
    """Bad invocation: unknown flag combinations, missing arguments."""


class DataError(SimtlabError):
    """Malformed or inconsistent input data (files, configs, mismatched k)."""


class NumericError(SimtlabError):
    """Numerical failure such as a non-finite loss or distribution."""
