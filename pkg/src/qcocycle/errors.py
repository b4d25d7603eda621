"""Exception types shared across the package."""


class CocycleError(Exception):
    """Base class for package errors."""


class ConfigError(CocycleError):
    """Malformed or out-of-range experiment configuration."""


class CatalogError(ConfigError):
    """Unknown catalog name."""


class ExpansionError(CocycleError, ValueError):
    """A fiber map violates the uniform expansion contract."""


class DomainError(CocycleError, ValueError):
    """Point outside [0, 1)."""


class ConvergenceError(CocycleError):
    """A pullback or solver did not reach its tolerance."""


class BranchJumpError(ConvergenceError):
    """log-eigenvalue branch jumped along a theta path."""


class ContourMismatchError(ConvergenceError):
    """Contour and finite-difference derivatives disagree."""


class PerturbativeError(ConvergenceError):
    """Twisted pullback integral collapsed towards zero."""


class ZeroCountError(CocycleError):
    """Direct Monte Carlo saw no events; use the tilted estimator."""


class LatticeError(CocycleError):
    """Local limit prediction requested for a lattice observable."""
