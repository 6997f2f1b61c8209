"""Exception hierarchy shared by all modules."""


class FBSurfError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(FBSurfError, ValueError):
    """Invalid input (configuration, moduli point, metric)."""


class NonPositiveRadius(ValidationError):
    def __init__(self, i, value):
        self.i = i
        self.value = value
        super().__init__(f"NonPositiveRadius({i}): r{i} = {value!r} must be > 0")


class OverlappingPair(ValidationError):
    def __init__(self, i, j, total):
        self.i = i
        self.j = j
        self.total = total
        super().__init__(
            f"OverlappingPair({i},{j}): r{i} + r{j} = {total!r} >= pi/2"
        )


class PointOutsideDomain(ValidationError):
    pass


class DegenerateMetric(ValidationError):
    pass


class SolverError(FBSurfError, RuntimeError):
    """A numerical procedure failed."""


class IllConditioned(SolverError):
    pass


class ResidualAboveTolerance(SolverError):
    def __init__(self, residual, tol):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"ResidualAboveTolerance: max boundary residual {residual:.3e} > {tol:.1e}"
        )


class SymmetryDefect(SolverError):
    pass


class ConvergenceFailure(SolverError):
    pass


class NoConvergence(ConvergenceFailure):
    def __init__(self, iterations, detail=""):
        self.iterations = iterations
        msg = f"NoConvergence after {iterations} iterations"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NonPositiveMetric(SolverError):
    pass


class LeftModuliSpace(SolverError):
    pass


class PeriodDefect(SolverError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"PeriodDefect: {value:.3e}")


class ResidualGateError(FBSurfError):
    """A post-solve residual gate failed (exit code 4 in the CLI)."""


class NotCritical(ResidualGateError):
    pass


class NotMaximal(ResidualGateError):
    pass


class DegenerateMesh(ResidualGateError):
    pass


class BoundaryAttracted(ResidualGateError):
    pass


class RankCollapse(UserWarning):
    """A constrained minimizer uses fewer than three components (reported, not fatal)."""
