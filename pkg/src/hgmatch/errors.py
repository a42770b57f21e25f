"""Shared exception types mapped to CLI exit codes."""


class DataError(Exception):
    """Malformed or inconsistent input data (exit code 3)."""


class NumericError(Exception):
    """Non-finite values encountered during training (exit code 4)."""
