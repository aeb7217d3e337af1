"""Exception hierarchy. The CLI maps these onto exit codes."""


class ParabolicOrbitError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(ParabolicOrbitError, ValueError):
    pass


class DomainError(ParabolicOrbitError, ValueError):
    """A point lies outside the domain of a potential or perturbation.

    ``where`` carries the offending body index, pair of indices, or
    quadrature time so that collisions can be diagnosed.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class ContractViolation(ParabolicOrbitError, ValueError):
    """A documented precondition or postcondition does not hold."""


class NotCentralConfigurationError(ContractViolation):
    pass


class SolverError(ParabolicOrbitError, RuntimeError):
    """Base class for numerical failures of an iterative method."""


class ConvergenceError(SolverError):
    pass


class TrustRegionError(SolverError):
    """An iterate left the ball ||phi|| < rho or |sigma| < r."""


class ConeBreachError(SolverError):
    """An evaluation point left the admissible cone during assembly."""


class PositivityLostError(SolverError):
    """The Hessian at an accepted critical point is not positive definite."""


class ConfigError(ParabolicOrbitError, ValueError):
    """Invalid problem configuration (schema or physical parameters)."""
