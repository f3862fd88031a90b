"""Gibbs-kernel solver for the regularized Wasserstein proximal operator.

The terminal density of the regularized proximal flow is an integral map

    rho_T(x) = int K(x, y) rho_0(y) dy,
    K(x, y) = exp(-(V(x) + ||x-y||^2 / 2T) / 2 beta) / Z(y),

where Z(y) normalizes each column. For general energies V is replaced by
the first variation evaluated at the terminal density. Full space-time
solutions (rho(t, x), Phi(t, x)) come from two heat-kernel convolutions.

All exponentials are assembled in the log domain with per-column max
subtraction, so small beta cannot underflow the normalizers.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .energy import EnergySpec, first_variation
from .errors import DegenerateDenominator, InvalidTime, ShapeMismatch
from .grid import DensityField, Grid1D, GridFn


@dataclass(frozen=True)
class ProxProblem:
    """Inputs of one proximal solve: initial density, energy, T, beta, grid."""

    rho0: DensityField
    energy: EnergySpec
    T: float
    beta: float
    grid: Grid1D

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"terminal time must be positive, got {self.T}")
        if not self.beta > 0:
            raise ValueError(f"diffusion regularizer must be positive, got {self.beta}")
        if self.rho0.grid != self.grid:
            raise ShapeMismatch("rho0 lives on a different grid than the problem")
        self.rho0.require_unit_mass(1e-8)


@dataclass
class KernelMatrix:
    """Dense Gibbs kernel K_ij = K(x_i, y_j) with quadrature-normalized columns."""

    grid: Grid1D
    matrix: np.ndarray
    beta: float
    T: float
    energy_tag: str = "linear"

    def __post_init__(self):
        n = self.grid.n_x
        if self.matrix.shape != (n, n):
            raise ShapeMismatch(f"kernel matrix must be {n}x{n}, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise DegenerateDenominator("kernel matrix contains non-finite entries")
        if np.any(self.matrix < 0.0):
            raise ValueError("kernel matrix has negative entries")

    def column_masses(self) -> np.ndarray:
        return self.grid.h_x * self.matrix.sum(axis=0)


@dataclass
class SpaceTimeSolution:
    """Density and potential snapshots rho(t_l, x_j), Phi(t_l, x_j)."""

    grid: Grid1D
    times: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    mass_tol: float = 1e-6

    def __post_init__(self):
        n_slices = len(self.times)
        shape = (n_slices, self.grid.n_x)
        if self.rho.shape != shape or self.phi.shape != shape:
            raise ShapeMismatch(f"expected snapshot arrays of shape {shape}")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("potential snapshots contain NaN or Inf")
        masses = self.grid.h_x * self.rho.sum(axis=1)
        worst = np.max(np.abs(masses - 1.0))
        if worst > self.mass_tol:
            raise ValueError(
                f"slice mass deviates from 1 by {worst:.3g} (> {self.mass_tol:g})"
            )


def heat_kernel(x, y, t, beta, d=1):
    """Scaled heat kernel (4 pi beta t)^(-d/2) exp(-||x - y||^2 / (4 beta t))."""
    if t <= 0.0:
        raise InvalidTime(f"heat kernel needs t > 0, got {t}")
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim > 0 and y.ndim > 0 and x.shape[-1:] != y.shape[-1:] and d > 1:
        raise ShapeMismatch("points of different dimension")
    diff = x - y
    sq = np.sum(diff**2, axis=-1) if (d > 1 and diff.ndim > 0) else diff**2
    return np.exp(-sq / (4.0 * beta * t)) / math.sqrt((4.0 * math.pi * beta * t) ** d)


def _gibbs_matrix(grid: Grid1D, potential_values: np.ndarray, T: float, beta: float):
    """Column-normalized Gibbs kernel on the grid, assembled in the log domain."""
    x = grid.points
    logits = -(potential_values[:, None] + (x[:, None] - x[None, :]) ** 2 / (2.0 * T)) / (
        2.0 * beta
    )
    log_norm = logsumexp(logits, axis=0)
    if not np.all(np.isfinite(log_norm)):
        raise DegenerateDenominator("a kernel column normalizer is degenerate")
    K = np.exp(logits - log_norm[None, :]) / grid.h_x
    return K


def linear_kernel(problem: ProxProblem) -> KernelMatrix:
    """Gibbs kernel for a linear energy (potential only)."""
    if not problem.energy.is_linear:
        raise ValueError("linear_kernel needs an energy with no interaction/internal part")
    V = problem.energy.potential_on(problem.grid)
    K = _gibbs_matrix(problem.grid, V, problem.T, problem.beta)
    return KernelMatrix(problem.grid, K, problem.beta, problem.T, energy_tag="linear")


def nonlinear_kernel(problem: ProxProblem, rho_T_guess: DensityField) -> KernelMatrix:
    """Gibbs kernel with the potential replaced by the first variation at a guess."""
    if rho_T_guess.grid != problem.grid:
        raise ShapeMismatch("terminal guess lives on a different grid")
    F = first_variation(problem.energy, rho_T_guess).values
    K = _gibbs_matrix(problem.grid, F, problem.T, problem.beta)
    return KernelMatrix(
        problem.grid, K, problem.beta, problem.T, energy_tag=problem.energy.name
    )


def apply_kernel(K: KernelMatrix, rho0: DensityField) -> DensityField:
    """Integral map rho_T(x_i) = h_x sum_j K_ij rho0_j."""
    if rho0.grid != K.grid:
        raise ShapeMismatch("density grid does not match kernel grid")
    values = K.grid.h_x * (K.matrix @ rho0.values)
    return DensityField(K.grid, values).require_unit_mass(1e-6)


def _padded_nodes(grid: Grid1D, pad_width: float):
    """Quadrature nodes extending the grid by pad_width on both sides."""
    n_pad = int(math.ceil(pad_width / grid.h_x))
    return np.arange(-n_pad, grid.n_x + n_pad) * grid.h_x - grid.b


def _log_eta(x_eval, nodes, log_weights, s, beta, h_x):
    """log of (G_s * e^(-V/2beta)) evaluated at x_eval via padded quadrature."""
    sq = (np.asarray(x_eval)[:, None] - nodes[None, :]) ** 2
    logits = -sq / (4.0 * beta * s) + log_weights[None, :]
    return (
        logsumexp(logits, axis=1)
        + math.log(h_x)
        - 0.5 * math.log(4.0 * math.pi * beta * s)
    )


def spacetime_solution(
    problem: ProxProblem, n_t: int, pad_sigmas: float = 8.0
) -> SpaceTimeSolution:
    """Snapshots of rho(t, x) and Phi(t, x) at t_l = l T / n_t for a linear energy.

    Interior slices come from the two heat convolutions

        rho(t, .) = (G_{T-t} * e^{-V/2beta}) . (G_t * rho0 / (G_T * e^{-V/2beta})),
        Phi(t, .) = 2 beta log(G_{T-t} * e^{-V/2beta}),

    endpoint slices use the boundary data (rho(0) = rho0, Phi(T) = -V) and
    the kernel map for rho(T). Convolutions against e^{-V/2beta} extend the
    quadrature pad_sigmas heat-widths beyond the grid so that boundary values
    track the whole-line integrals; the first interior time needs
    sqrt(2 beta T / n_t) of a few h_x for the quadrature to resolve G_t.
    """
    if not problem.energy.is_linear:
        raise ValueError("space-time solution is defined for linear energies")
    if n_t < 1:
        raise ValueError("need at least one time step")
    grid, T, beta = problem.grid, problem.T, problem.beta
    h = grid.h_x
    x = grid.points

    pad_width = pad_sigmas * math.sqrt(2.0 * beta * T)
    nodes = _padded_nodes(grid, pad_width)
    if problem.energy.potential is None:
        V_nodes = np.zeros_like(nodes)
    else:
        V_nodes = np.asarray(problem.energy.potential(nodes), dtype=float)
    log_w = -V_nodes / (2.0 * beta)
    V_grid = problem.energy.potential_on(grid)

    times = np.arange(n_t + 1) * (T / n_t)
    rho = np.empty((n_t + 1, grid.n_x))
    phi = np.empty((n_t + 1, grid.n_x))

    log_eta0 = _log_eta(x, nodes, log_w, T, beta, h)
    eta_hat0 = problem.rho0.values / np.exp(log_eta0)

    rho[0] = problem.rho0.values
    phi[0] = 2.0 * beta * log_eta0
    rho[n_t] = apply_kernel(linear_kernel(problem), problem.rho0).values
    phi[n_t] = -V_grid

    for l in range(1, n_t):
        t = times[l]
        log_eta = _log_eta(x, nodes, log_w, T - t, beta, h)
        G = np.exp(-((x[:, None] - x[None, :]) ** 2) / (4.0 * beta * t)) / math.sqrt(
            4.0 * math.pi * beta * t
        )
        eta_hat = h * (G @ eta_hat0)
        rho[l] = np.exp(log_eta) * eta_hat
        phi[l] = 2.0 * beta * log_eta

    return SpaceTimeSolution(grid, times, rho, phi)


def rho_recast_check(problem: ProxProblem, t: float, x: float):
    """Evaluate rho(t, x) through the two equivalent double-integral forms.

    Returns the pair (direct form, recast form). The direct form keeps the
    product of the two heat factors centered at x; the recast form regroups
    them into a transport average (t z + (T - t) y) / T. Both use the same
    on-grid quadrature; they agree up to rounding. Test helper.
    """
    if not 0.0 < t < problem.T:
        raise ValueError("recast check needs an interior time 0 < t < T")
    grid, T, beta = problem.grid, problem.T, problem.beta
    h = grid.h_x
    y = grid.points
    z = grid.points
    V = problem.energy.potential_on(grid)
    rho0 = problem.rho0.values

    denom = h * np.exp(
        -(V[None, :] + (y[:, None] - z[None, :]) ** 2 / (2.0 * T)) / (2.0 * beta)
    ).sum(axis=1)
    pref = 1.0 / math.sqrt(4.0 * math.pi * beta * t * (T - t) / T)

    direct = np.exp(
        -(
            V[None, :]
            + (x - z[None, :]) ** 2 / (2.0 * (T - t))
            + (x - y[:, None]) ** 2 / (2.0 * t)
        )
        / (2.0 * beta)
    )
    val_direct = pref * h * h * float((direct.sum(axis=1) / denom) @ rho0)

    midpoint = (t * z[None, :] + (T - t) * y[:, None]) / T
    recast = np.exp(
        -(V[None, :] + (y[:, None] - z[None, :]) ** 2 / (2.0 * T)) / (2.0 * beta)
        - (x - midpoint) ** 2 / (4.0 * beta * t * (T - t) / T)
    )
    val_recast = pref * h * h * float((recast.sum(axis=1) / denom) @ rho0)

    return val_direct, val_recast
