"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1, IoError -> 2,
NumericError -> 3.
"""


class CtclassError(Exception):
    """Base class for package errors."""


class ValidationError(CtclassError):
    """Bad parameters, malformed input, or violated preconditions."""


class IoError(CtclassError):
    """File ingestion/export failures."""


class NumericError(CtclassError):
    """Numerical failures such as divergent trajectories."""
