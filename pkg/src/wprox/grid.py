"""Uniform periodic 1D grids, Riemann-sum quadrature, and discrete operators.

Every solver in the package shares this discretization: a uniform mesh on
[-b, b] with the right endpoint identified with the left one, Riemann-sum
quadrature with weight h_x, and periodic finite-difference stencils.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import NegativeFluxComponent, NonpositiveMass, ShapeMismatch

# Values in [-NEG_CLAMP, 0) are treated as quadrature round-off and clamped
# to zero; anything below is a hard error.
NEG_CLAMP = 1e-12


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic mesh on [-b, b] with n_x cells.

    Points are x_j = j * h_x - b for j = 0..n_x-1, so x = -b is included and
    x = +b is identified with x = -b. The spacing h_x = 2b / n_x is derived,
    never set independently.
    """

    b: float
    n_x: int

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"domain half-width must be positive, got {self.b}")
        if not (isinstance(self.n_x, (int, np.integer)) and self.n_x > 0):
            raise ValueError(f"n_x must be a positive integer, got {self.n_x!r}")

    @property
    def h_x(self) -> float:
        return 2.0 * self.b / self.n_x

    @cached_property
    def points(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h_x - self.b

    @classmethod
    def from_spacing(cls, b: float, h_x: float) -> "Grid1D":
        """Grid whose spacing is as close as possible to h_x (n_x rounded)."""
        n_x = int(round(2.0 * b / h_x))
        return cls(b=b, n_x=n_x)


@dataclass
class GridFn:
    """Real-valued function sampled on a Grid1D, one value per grid point."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_x,):
            raise ShapeMismatch(
                f"expected {self.grid.n_x} values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function contains NaN or Inf")

    @classmethod
    def from_callable(cls, grid: Grid1D, fn) -> "GridFn":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))


@dataclass
class DensityField(GridFn):
    """Nonnegative grid function with (approximately) unit discrete mass.

    Construction clamps round-off negatives in [-1e-12, 0) to zero and
    rejects anything more negative. The mass check at construction is a
    coarse guard (1e-3); use :meth:`require_unit_mass` where a contract
    demands a tighter tolerance, or :func:`normalize` to restore exact mass.
    """

    mass_tol: float = field(default=1e-3, compare=False)

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < -NEG_CLAMP):
            raise NonpositiveMass(
                f"density has negative entries below {-NEG_CLAMP:g}"
            )
        self.values = np.where(self.values < 0.0, 0.0, self.values)
        mass = self.grid.h_x * self.values.sum()
        if abs(mass - 1.0) > self.mass_tol:
            raise NonpositiveMass(
                f"density mass {mass:.6g} deviates from 1 beyond {self.mass_tol:g}"
            )

    def require_unit_mass(self, tol: float) -> "DensityField":
        mass = self.grid.h_x * self.values.sum()
        if abs(mass - 1.0) > tol:
            raise NonpositiveMass(f"density mass {mass:.12g} not within {tol:g} of 1")
        return self


def riemann_integral(f: GridFn) -> float:
    """h_x * sum_j f_j, the Riemann sum over one period."""
    return float(f.grid.h_x * f.values.sum())


def l2_norm(f: GridFn) -> float:
    """Discrete L2 norm sqrt(h_x * sum_j f_j**2).

    The h_x weight makes norms comparable across meshes, which is what the
    convergence tables rely on.
    """
    return float(np.sqrt(f.grid.h_x * np.square(f.values).sum()))


def normalize(f: GridFn) -> DensityField:
    """Rescale a nonnegative grid function to unit discrete mass."""
    values = np.asarray(f.values, dtype=float)
    if np.any(values < -NEG_CLAMP):
        raise NonpositiveMass("cannot normalize a function with negative values")
    values = np.where(values < 0.0, 0.0, values)
    mass = f.grid.h_x * values.sum()
    if mass <= 0.0:
        raise NonpositiveMass(f"total mass {mass:.6g} is not positive")
    return DensityField(f.grid, values / mass)


def periodic_laplacian(f: GridFn) -> GridFn:
    """Second-difference stencil (f_{j+1} + f_{j-1} - 2 f_j) / h_x**2, periodic."""
    v = f.values
    lap = (np.roll(v, -1) + np.roll(v, 1) - 2.0 * v) / f.grid.h_x**2
    return GridFn(f.grid, lap)


def upwind_divergence(m_plus: GridFn, m_minus: GridFn) -> GridFn:
    """Split-flux (donor-cell) upwind divergence with periodic wrap.

    Both components are nonnegative magnitudes: the flux is m = m+ - m-.
    The interface flux F_{j+1/2} = m+_j - m-_{j+1} gives

        div m_j = (m+_j - m+_{j-1}) / h_x - (m-_{j+1} - m-_j) / h_x.
    """
    if m_plus.grid != m_minus.grid:
        raise ShapeMismatch("flux components live on different grids")
    for name, comp in (("m_plus", m_plus), ("m_minus", m_minus)):
        if np.any(comp.values < -NEG_CLAMP):
            raise NegativeFluxComponent(f"{name} has entries below {-NEG_CLAMP:g}")
    h = m_plus.grid.h_x
    mp = np.maximum(m_plus.values, 0.0)
    mm = np.maximum(m_minus.values, 0.0)
    div = (mp - np.roll(mp, 1)) / h - (np.roll(mm, -1) - mm) / h
    return GridFn(m_plus.grid, div)
