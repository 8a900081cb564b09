"""Exception types shared across the package.

The CLI maps ValidationError to exit code 2 and TrainingError (and any
other runtime/numeric failure) to exit code 3.
"""


class ValidationError(ValueError):
    """Bad input: malformed manifest record, shape mismatch, contract violation."""


class TrainingError(RuntimeError):
    """Numeric failure during optimization (NaN/Inf loss, corrupted state)."""
