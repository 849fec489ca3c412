"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violates an operation's stated preconditions."""


class SizeError(ContractError):
    """An input is too small or too large for the requested operation."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


class DivergenceError(RuntimeError):
    """Training loss exceeded the divergence guard."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
