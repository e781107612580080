"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """Input violates a documented precondition."""


class UnsupportedOperationError(InvalidArgumentError):
    """Operation is not defined for the given kind of input (e.g. mixed grids)."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    The last residual norm and iteration count are kept for diagnostics.
    """

    def __init__(self, message, residual=float("nan"), iterations=0, step=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.step = step


class RankDeficientError(ValueError):
    """Requested number of modes exceeds the numerical rank of the data."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class IllPosedRomError(RuntimeError):
    """Reduced system matrix is numerically singular."""


class RomFailure(RuntimeError):
    """A reduced-order solve failed inside an error sweep; records the basis size."""

    def __init__(self, message, ell, cause=None):
        super().__init__(message)
        self.ell = ell
        self.cause = cause
