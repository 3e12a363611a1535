"""Exception hierarchy for numerical failures."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures that abort a computation."""


class NotPositiveDefinite(NumericalError):
    """A triangular factorization met a non-positive pivot.

    ``index`` holds the flat batch indices of the offending matrices, when known.
    """

    def __init__(self, msg="matrix is not positive definite", index=None):
        super().__init__(msg)
        self.index = index


class ExpOverflow(NumericalError):
    """An eigenvalue is too large to exponentiate in double precision."""
