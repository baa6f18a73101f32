"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a structural precondition (shape, sign, schema)."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite or otherwise untrustworthy values."""
