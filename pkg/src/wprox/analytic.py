"""Closed-form Gaussian reference solutions for the quadratic potential.

For V(x) = 0.5 * ||x - x0||^2 the regularized proximal flow has explicit
Gaussian solutions; these serve as exact oracles for the quadrature-based
solvers. All Gaussians are isotropic.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianDensity:
    """Isotropic Gaussian N(mean, variance * I_d)."""

    mean: float
    variance: float
    d: int = 1

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        norm = (2.0 * math.pi * self.variance) ** (self.d / 2.0)
        return np.exp(-((x - self.mean) ** 2) / (2.0 * self.variance)) / norm


def quadratic_phi(x, t, x0, T, beta, d=1):
    """Potential Phi(t, x) = beta * d * log(1/(T - t + 1)) - ||x - x0||^2 / (2 (T - t + 1))."""
    if not 0.0 <= t <= T:
        raise ValueError(f"t = {t} outside [0, {T}]")
    x = np.asarray(x, dtype=float)
    s = T - t + 1.0
    return beta * d * math.log(1.0 / s) - (x - x0) ** 2 / (2.0 * s)


def quadratic_rho_T(rho0: GaussianDensity, x0, T, beta) -> GaussianDensity:
    """Terminal density: the proximal of a Gaussian under the quadratic potential.

    The terminal integral kernel is Gaussian with mean (y + T x0) / (1 + T)
    and variance 2 beta T / (1 + T); convolving with Gaussian rho0 gives
    another Gaussian in closed form.
    """
    mean = (rho0.mean + T * x0) / (1.0 + T)
    variance = rho0.variance / (1.0 + T) ** 2 + 2.0 * beta * T / (1.0 + T)
    return GaussianDensity(mean, variance, rho0.d)


def quadratic_rho_t(rho0: GaussianDensity, x0, t, T, beta) -> GaussianDensity:
    """Intermediate density rho(t, .) for 0 < t <= T.

    The intermediate kernel maps y to mean (y (T - t + 1) + t x0) / (T + 1)
    with variance 2 beta t (T - t + 1) / (T + 1).
    """
    if not 0.0 < t <= T:
        raise ValueError(f"t = {t} outside (0, {T}]")
    s = T - t + 1.0
    mean = (rho0.mean * s + t * x0) / (T + 1.0)
    variance = rho0.variance * s**2 / (T + 1.0) ** 2 + 2.0 * beta * t * s / (T + 1.0)
    return GaussianDensity(mean, variance, rho0.d)
