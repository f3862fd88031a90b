"""Regularized Wasserstein proximal operators on 1D grids.

Three routes to the same object are provided and cross-validated:

- a closed-form Gibbs-kernel integral map for linear energies,
- a fixed-point kernel iteration for general energies,
- an independent finite-difference mean-field control solver (PDHG).
"""

from .errors import (
    ConfigError,
    DegenerateDenominator,
    EntropyDomainError,
    InvalidTime,
    NegativeFluxComponent,
    NewtonDivergence,
    NonpositiveMass,
    RootFindFailure,
    ShapeMismatch,
    StepSizeViolation,
    WproxError,
)
from .grid import (
    DensityField,
    Grid1D,
    GridFn,
    l2_norm,
    normalize,
    periodic_laplacian,
    riemann_integral,
    upwind_divergence,
)

__version__ = "0.1.0"

__all__ = [
    "Grid1D",
    "GridFn",
    "DensityField",
    "riemann_integral",
    "l2_norm",
    "normalize",
    "periodic_laplacian",
    "upwind_divergence",
    "WproxError",
    "NonpositiveMass",
    "NegativeFluxComponent",
    "InvalidTime",
    "ShapeMismatch",
    "DegenerateDenominator",
    "EntropyDomainError",
    "RootFindFailure",
    "NewtonDivergence",
    "StepSizeViolation",
    "ConfigError",
    "__version__",
]
