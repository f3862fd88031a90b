"""Exception types shared across the solvers."""


class WproxError(Exception):
    """Base class for all package-specific errors."""


class NonpositiveMass(WproxError):
    """Raised when a grid function cannot be normalized to a density."""


class NegativeFluxComponent(WproxError):
    """Raised when a split flux component is negative beyond round-off."""


class InvalidTime(WproxError):
    """Raised when a kernel is requested at a nonpositive time."""


class ShapeMismatch(WproxError):
    """Raised when array shapes or grids are incompatible."""


class DegenerateDenominator(WproxError):
    """Raised when a Gibbs-kernel column normalizer underflows.

    Unreachable for bounded potentials because kernels are assembled in
    the log domain; kept for pathological energy specs.
    """


class EntropyDomainError(WproxError):
    """Raised when an entropy-type internal energy hits rho = 0 with no guard."""


class RootFindFailure(WproxError):
    """Raised when the safeguarded Newton solve for a pointwise prox stalls."""


class NewtonDivergence(WproxError):
    """Raised when the scalar prox Newton iteration diverges for an internal energy."""


class StepSizeViolation(WproxError):
    """Raised when primal/dual step sizes violate tau * sigma * L**2 <= 1."""


class ConfigError(WproxError):
    """Raised for malformed experiment configurations."""
