"""Exception types raised by the package."""


class InvalidArgument(ValueError):
    """A caller-supplied value violates a documented precondition."""


class NumericalFailure(ArithmeticError):
    """A computation produced a non-finite or singular intermediate."""
