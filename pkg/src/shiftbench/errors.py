"""Exception hierarchy. The CLI maps these onto exit codes."""


class ShiftBenchError(ValueError):
    """Base class for all library errors."""


class DataError(ShiftBenchError):
    """Malformed, missing or insufficient input data."""


class NumericError(ShiftBenchError, ArithmeticError):
    """A computation produced non-finite values."""
