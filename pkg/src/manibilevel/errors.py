"""Exception types shared across the library."""


class ContractError(ValueError):
    """A documented precondition or invariant was violated by the caller."""


class NumericError(RuntimeError):
    """A numerical routine failed.

    Diagnostic context (condition estimates, residuals, iteration counts)
    is attached as keyword arguments and exposed via ``info``.
    """

    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = dict(info)


class UnsupportedOperationError(NotImplementedError):
    """The operation is not available on this manifold."""
