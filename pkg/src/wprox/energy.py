"""Energy functionals F(rho) and their L2 first variations.

An energy is the sum of up to three parts,

    F(rho) = int V(x) rho(x) dx
           + 1/2 int int W(x - y) rho(x) rho(y) dx dy
           + int U(rho(x), x) dx,

with first variation F(x, rho) = V(x) + (W * rho)(x) + U'(rho(x), x).

The internal part takes the point x as a second argument so that
reference-density energies (the modified KL divergence) fit the same
interface; plain internal energies ignore it.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import EntropyDomainError
from .grid import DensityField, Grid1D, GridFn


@dataclass(frozen=True)
class EnergySpec:
    """Declarative description of an energy functional.

    potential:            V(x), vectorized over x.
    interaction:          even kernel W(z) with W(z) = W(-z), vectorized.
    internal:             U(s, x), vectorized over equal-shape arrays.
    internal_derivative:  dU/ds (s, x), required whenever internal is set.
    epsilon:              nonnegative guard for entropy-type internal parts.
    entropy_like:         marks internal parts that need epsilon > 0 at rho = 0.
    name:                 short tag used in kernel metadata and CSV headers.
    """

    potential: Optional[Callable] = None
    interaction: Optional[Callable] = None
    internal: Optional[Callable] = None
    internal_derivative: Optional[Callable] = None
    epsilon: float = 0.0
    entropy_like: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")
        if (self.internal is None) != (self.internal_derivative is None):
            raise ValueError("internal and internal_derivative must be set together")
        if self.interaction is not None:
            z = np.linspace(0.1, 3.7, 7)
            asym = np.abs(np.asarray(self.interaction(z)) - np.asarray(self.interaction(-z)))
            if np.max(asym) > 1e-12:
                raise ValueError("interaction kernel is not even: W(z) != W(-z)")

    @property
    def is_linear(self) -> bool:
        """True when the first variation does not depend on rho."""
        return self.interaction is None and self.internal is None

    def potential_on(self, grid: Grid1D) -> np.ndarray:
        if self.potential is None:
            return np.zeros(grid.n_x)
        return np.asarray(self.potential(grid.points), dtype=float)

    def interaction_matrix(self, grid: Grid1D) -> Optional[np.ndarray]:
        """W(x_i - x_j) on the grid, or None when there is no interaction."""
        if self.interaction is None:
            return None
        x = grid.points
        return np.asarray(self.interaction(x[:, None] - x[None, :]), dtype=float)


def interaction_convolution(spec: EnergySpec, rho: GridFn) -> np.ndarray:
    """(W * rho)(x_j) = h_x sum_i W(x_j - x_i) rho_i by direct summation."""
    Wm = spec.interaction_matrix(rho.grid)
    if Wm is None:
        return np.zeros(rho.grid.n_x)
    return rho.grid.h_x * (Wm @ rho.values)


def eval_energy(spec: EnergySpec, rho: DensityField) -> float:
    """Discretized energy h_x sum(V q + U(q)) + h_x^2/2 sum W(x_i - x_j) q_i q_j."""
    h = rho.grid.h_x
    q = rho.values
    total = h * float(np.dot(spec.potential_on(rho.grid), q))
    if spec.internal is not None:
        total += h * float(np.sum(spec.internal(q, rho.grid.points)))
    Wm = spec.interaction_matrix(rho.grid)
    if Wm is not None:
        total += 0.5 * h * h * float(q @ Wm @ q)
    return total


def first_variation(spec: EnergySpec, rho: DensityField) -> GridFn:
    """Pointwise V(x_j) + (W * rho)(x_j) + U'(rho_j, x_j)."""
    values = spec.potential_on(rho.grid) + interaction_convolution(spec, rho)
    if spec.internal_derivative is not None:
        if spec.entropy_like and spec.epsilon == 0.0 and np.any(rho.values == 0.0):
            raise EntropyDomainError(
                "entropy-type internal energy needs epsilon > 0 when rho hits 0"
            )
        values = values + np.asarray(
            spec.internal_derivative(rho.values, rho.grid.points), dtype=float
        )
    return GridFn(rho.grid, values)


def kl_first_variation(
    rho: DensityField, rho_F: DensityField, lambda_F: float, epsilon: float
) -> GridFn:
    """First variation of the epsilon-modified KL divergence.

    For F(rho) = lambda_F int rho log((rho + eps) / (rho_F + eps)) the exact
    variation is lambda_F [log((rho + eps) / (rho_F + eps)) + rho / (rho + eps)].
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if lambda_F < 0.0:
        raise ValueError("lambda_F must be nonnegative")
    r, f = rho.values, rho_F.values
    values = lambda_F * (np.log((r + epsilon) / (f + epsilon)) + r / (r + epsilon))
    return GridFn(rho.grid, values)


# ---------------------------------------------------------------------------
# Named builders, also reachable from the JSON experiment configs.

def gaussian_bump_potential(amplitude=1.0, center=-0.25, width=0.5) -> EnergySpec:
    """Linear energy with V(x) = amplitude * exp(-(x - center)^2 / width)."""
    a, c, w = float(amplitude), float(center), float(width)
    return EnergySpec(
        potential=lambda x: a * np.exp(-((x - c) ** 2) / w),
        name="gaussian_bump_potential",
    )


def quadratic_potential(center=0.0) -> EnergySpec:
    """Linear energy with V(x) = 0.5 (x - center)^2 (the analytic test case)."""
    c = float(center)
    return EnergySpec(potential=lambda x: 0.5 * (x - c) ** 2, name="quadratic_potential")


def quadratic_interaction(strength=0.2) -> EnergySpec:
    """Interaction energy with W(z) = strength * z^2."""
    lam = float(strength)
    return EnergySpec(interaction=lambda z: lam * z**2, name="quadratic_interaction")


def quadratic_internal(coefficient=0.5) -> EnergySpec:
    """Internal energy U(s) = coefficient * s^2."""
    c = float(coefficient)
    return EnergySpec(
        internal=lambda s, x: c * s**2,
        internal_derivative=lambda s, x: 2.0 * c * s,
        name="quadratic_internal",
    )


def kl_internal(
    strength=0.1, target_center=0.0, target_sigma=0.4, epsilon=1e-4
) -> EnergySpec:
    """Epsilon-modified KL divergence against a Gaussian reference density."""
    lam, mu, sig, eps = float(strength), float(target_center), float(target_sigma), float(epsilon)
    if eps <= 0.0:
        raise ValueError("kl_internal needs epsilon > 0")

    def ref(x):
        return np.exp(-((x - mu) ** 2) / (2.0 * sig**2)) / (sig * np.sqrt(2.0 * np.pi))

    return EnergySpec(
        internal=lambda s, x: lam * s * np.log((s + eps) / (ref(x) + eps)),
        internal_derivative=lambda s, x: lam
        * (np.log((s + eps) / (ref(x) + eps)) + s / (s + eps)),
        epsilon=eps,
        entropy_like=True,
        name="kl_internal",
    )


ENERGY_BUILTINS = {
    "gaussian_bump_potential": gaussian_bump_potential,
    "quadratic_potential": quadratic_potential,
    "quadratic_interaction": quadratic_interaction,
    "quadratic_internal": quadratic_internal,
    "kl_internal": kl_internal,
}


def make_energy(name: str, **params) -> EnergySpec:
    """Build a named energy; 'none' or 'zero' gives the trivial energy."""
    if name in ("none", "zero"):
        return EnergySpec(name="zero")
    try:
        builder = ENERGY_BUILTINS[name]
    except KeyError:
        known = ", ".join(sorted(ENERGY_BUILTINS))
        raise ValueError(f"unknown energy {name!r}; known: {known}, none") from None
    return builder(**params)
