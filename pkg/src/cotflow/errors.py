"""Exception types raised across the package."""


class CotflowError(Exception):
    """Base class for all package-specific errors."""


class IncompatibleGrids(CotflowError):
    """Fields passed to one operation live on different grids."""


class NonConvergence(CotflowError):
    """An iterative linear solve hit its iteration cap above tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonSPDCoefficient(CotflowError):
    """A per-cell coefficient matrix is not symmetric positive definite."""


class RankDeficient(CotflowError):
    """Input matrix does not have full column rank."""


class UnsupportedForDR(CotflowError):
    """Constraint compilation for the splitting solver needs constant data."""


class EmptyFeasibleSet(CotflowError):
    """Density bounds contradict each other somewhere on the grid."""


class DykstraStall(CotflowError):
    """Cyclic projection still moving above tolerance at the sweep cap."""


class InfeasibleKinetic(CotflowError):
    """Momentum is nonzero at a cell with (numerically) zero density."""


class InvalidParameters(CotflowError):
    """Saddle-point step sizes violate the convergence inequalities."""


class SolverDiverged(CotflowError):
    """An iterate became non-finite; the run was aborted."""


class BoundaryHit(CotflowError):
    """Brute-force search kept hitting its box boundary after expansions."""


class DumpFormatError(CotflowError):
    """A binary field dump is truncated or has a bad header."""
