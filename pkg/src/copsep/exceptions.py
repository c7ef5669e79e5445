"""Error types shared across the toolkit."""


class CopsepError(Exception):
    """Base class for all toolkit-specific failures."""


class DegenerateInputError(CopsepError):
    """Input data is rank-deficient or constant where full rank is required."""


class NonConvergenceError(CopsepError):
    """Fixed-point iteration did not reach the tolerance within the budget.

    Attributes:
        iterations: number of iterations performed.
        last_delta: convergence measure at the final iteration.
    """

    def __init__(self, message: str, *, iterations: int, last_delta: float):
        super().__init__(message)
        self.iterations = iterations
        self.last_delta = last_delta


class DegenerateDependenceError(CopsepError):
    """Dependence is too close to deterministic for the estimator to work."""


class FamilyDomainError(CopsepError):
    """The data or parameters lie outside a copula family's domain."""


class BlockFitError(CopsepError):
    """A per-block copula fit failed; carries the offending block.

    Attributes:
        block: tuple of 0-based channel indices of the failing block.
    """

    def __init__(self, message: str, *, block: tuple):
        super().__init__(message)
        self.block = tuple(block)
