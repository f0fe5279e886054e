"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, missing inputs
(FileNotFoundError) -> 2, DataFormatError -> 3, NumericError -> 4.
"""


class DataFormatError(ValueError):
    """A wire file violates its format, or a record violates an invariant."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""
