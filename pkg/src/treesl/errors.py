"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-contract input (bad node id, bad file, bad parameter)."""


class FormulaSyntaxError(InputError):
    """Formula text does not conform to the grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class BudgetError(RuntimeError):
    """An exact enumeration would exceed the configured tuple budget."""


class BoundViolation(AssertionError):
    """A quantitative guarantee that should hold was violated."""


class CommutationError(RuntimeError):
    """A reduction tower failed its internal consistency verification."""
