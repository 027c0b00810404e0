"""Error types shared across the package.

The CLI maps these onto exit codes: DataValidationError -> 2,
NumericalError -> 3, usage problems -> 1.
"""


class FieldYieldError(Exception):
    """Base class for all package errors."""


class DataValidationError(FieldYieldError):
    """Malformed or inconsistent input data (files, shapes, ids, ranges)."""


class NumericalError(FieldYieldError):
    """Numerical failure: singular systems, non-finite gradients, overflow."""
