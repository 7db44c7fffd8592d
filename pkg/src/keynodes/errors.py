"""Exception taxonomy shared across the package.

The CLI maps these to exit codes: DataError -> 2, NumericError -> 3.
"""


class DataError(Exception):
    """Malformed or inconsistent input: files, unknown names, bad parameters."""


class ShapeError(DataError):
    """Tensor shape mismatch; message names the offending op and shapes."""


class NumericError(Exception):
    """Numerical failure: non-finite value or a non-converging iteration."""
