"""Exception hierarchy for the aircomp package."""


class AircompError(Exception):
    """Base class for all package errors."""


class ConfigError(AircompError):
    """Invalid system configuration or experiment specification."""


class NumericsError(AircompError):
    """Failure inside a dense linear-algebra routine."""


class EigenError(NumericsError):
    """Eigensolver did not converge or failed its residual check."""


class NearSingularError(NumericsError):
    """Linear system is numerically singular.

    Carries an estimate of the condition number in ``cond``.
    """

    def __init__(self, message, cond=float("inf")):
        super().__init__(message)
        self.cond = cond


class SolverError(AircompError):
    """Hard failure inside an optimization routine."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class AssemblyError(SolverError):
    """Subproblem data violates a structural property it must satisfy."""


class MonotonicityError(SolverError):
    """A block update increased the objective beyond tolerance."""


class DivergenceError(SolverError):
    """Iterates diverged (objective grew far beyond its initial value)."""
