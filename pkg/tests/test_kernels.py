import math

import numpy as np
import pytest
from scipy.special import erf

from wprox.analytic import GaussianDensity, quadratic_phi, quadratic_rho_T, quadratic_rho_t
from wprox.energy import EnergySpec, gaussian_bump_potential, quadratic_potential
from wprox.errors import DegenerateDenominator, InvalidTime, ShapeMismatch
from wprox.grid import DensityField, Grid1D, GridFn, l2_norm, normalize
from wprox.kernels import (
    KernelMatrix,
    ProxProblem,
    apply_kernel,
    heat_kernel,
    linear_kernel,
    nonlinear_kernel,
    rho_recast_check,
    spacetime_solution,
)


def gaussian_density(grid, mu, sigma):
    pdf = np.exp(-((grid.points - mu) ** 2) / (2 * sigma**2))
    return normalize(GridFn(grid, pdf))


def example_a_problem(n_x=160):
    grid = Grid1D(5.0, n_x)
    return ProxProblem(
        rho0=gaussian_density(grid, 0.25, 0.1),
        energy=gaussian_bump_potential(),
        T=0.2,
        beta=0.25,
        grid=grid,
    )


def quadratic_problem(n_x=320, T=0.2, beta=0.25, mu0=0.25, sigma0=0.1, x0=0.0):
    grid = Grid1D(5.0, n_x)
    return ProxProblem(
        rho0=gaussian_density(grid, mu0, sigma0),
        energy=quadratic_potential(center=x0),
        T=T,
        beta=beta,
        grid=grid,
    )


class TestHeatKernel:
    def test_closed_form_at_coincident_points(self):
        # (4 pi * 0.25 * 1)^(-1/2) = pi^(-1/2)
        val = heat_kernel(0.7, 0.7, t=1.0, beta=0.25)
        assert val == pytest.approx(1.0 / math.sqrt(math.pi))
        assert val == pytest.approx(0.56419, abs=1e-5)

    def test_symmetry(self):
        assert heat_kernel(0.3, -1.2, 0.5, 0.1) == heat_kernel(-1.2, 0.3, 0.5, 0.1)

    def test_quadrature_mass(self):
        grid = Grid1D(5.0, 320)
        vals = heat_kernel(grid.points, 0.0, t=0.2, beta=0.25)
        assert grid.h_x * vals.sum() == pytest.approx(1.0, abs=1e-9)

    def test_invalid_time(self):
        with pytest.raises(InvalidTime):
            heat_kernel(0.0, 0.0, t=0.0, beta=0.25)


class TestLinearKernel:
    def test_zero_potential_reduces_to_heat_kernel(self):
        prob = example_a_problem(320)
        prob = ProxProblem(prob.rho0, EnergySpec(name="zero"), prob.T, prob.beta, prob.grid)
        K = linear_kernel(prob)
        # Compare an interior column against the heat kernel; its quadrature
        # normalizer is 1 up to a Gaussian tail.
        j = 160
        col = K.matrix[:, j]
        G = heat_kernel(prob.grid.points, prob.grid.points[j], prob.T, prob.beta)
        assert np.max(np.abs(col - G)) < 1e-10

    def test_constant_potential_shift_invariance(self):
        prob = example_a_problem(160)
        base = EnergySpec(name="zero")
        shifted = EnergySpec(potential=lambda x: 3.0 * np.ones_like(x), name="const")
        K0 = linear_kernel(ProxProblem(prob.rho0, base, prob.T, prob.beta, prob.grid))
        K1 = linear_kernel(ProxProblem(prob.rho0, shifted, prob.T, prob.beta, prob.grid))
        assert np.max(np.abs(K0.matrix - K1.matrix)) <= 1e-12

    def test_gibbs_shift_invariance_on_bump(self):
        prob = example_a_problem(160)
        V = prob.energy.potential
        shifted = EnergySpec(potential=lambda x: V(x) + 7.3, name="shifted")
        K0 = linear_kernel(prob)
        K1 = linear_kernel(ProxProblem(prob.rho0, shifted, prob.T, prob.beta, prob.grid))
        assert np.max(np.abs(K0.matrix - K1.matrix)) <= 1e-12

    def test_column_stochasticity_exact(self):
        K = linear_kernel(example_a_problem(160))
        assert np.max(np.abs(K.column_masses() - 1.0)) <= 1e-13

    def test_rejects_nonlinear_energy(self):
        prob = example_a_problem(64)
        from wprox.energy import quadratic_interaction

        bad = ProxProblem(prob.rho0, quadratic_interaction(), prob.T, prob.beta, prob.grid)
        with pytest.raises(ValueError):
            linear_kernel(bad)

    def test_degenerate_denominator(self):
        grid = Grid1D(5.0, 32)
        rho0 = gaussian_density(grid, 0.0, 0.5)
        spec = EnergySpec(potential=lambda x: np.full_like(x, np.inf), name="bad")
        with pytest.raises(DegenerateDenominator):
            linear_kernel(ProxProblem(rho0, spec, 0.2, 0.25, grid))


class TestApplyKernel:
    def test_gaussian_spread_identity(self):
        # V = 0 turns the map into heat convolution: N(0, s^2) -> N(0, s^2 + 2 b T).
        grid = Grid1D(5.0, 320)
        rho0 = gaussian_density(grid, 0.0, 0.1)
        prob = ProxProblem(rho0, EnergySpec(name="zero"), 0.2, 0.25, grid)
        out = apply_kernel(linear_kernel(prob), rho0)
        target = GaussianDensity(0.0, 0.01 + 2 * 0.25 * 0.2).pdf(grid.points)
        err = l2_norm(GridFn(grid, out.values - target))
        assert err <= 1e-5

    def test_short_time_is_near_identity(self):
        grid = Grid1D(5.0, 320)
        rho0 = gaussian_density(grid, 0.25, 0.1)
        prob = ProxProblem(rho0, gaussian_bump_potential(), T=1e-4, beta=0.25, grid=grid)
        out = apply_kernel(linear_kernel(prob), rho0)
        assert l2_norm(GridFn(grid, out.values - rho0.values)) <= 1e-3

    def test_mass_one(self):
        prob = example_a_problem(160)
        out = apply_kernel(linear_kernel(prob), prob.rho0)
        assert prob.grid.h_x * out.values.sum() == pytest.approx(1.0, abs=1e-6)

    def test_shape_mismatch(self):
        prob = example_a_problem(160)
        other = gaussian_density(Grid1D(5.0, 80), 0.0, 0.3)
        with pytest.raises(ShapeMismatch):
            apply_kernel(linear_kernel(prob), other)


class TestNonlinearKernel:
    def test_linear_energy_is_guess_independent(self):
        prob = example_a_problem(160)
        K_lin = linear_kernel(prob)
        for mu in (-0.5, 0.0, 0.5):
            guess = gaussian_density(prob.grid, mu, 0.2)
            K = nonlinear_kernel(prob, guess)
            assert np.array_equal(K.matrix, K_lin.matrix)

    def test_grid_mismatch(self):
        prob = example_a_problem(160)
        with pytest.raises(ShapeMismatch):
            nonlinear_kernel(prob, gaussian_density(Grid1D(5.0, 80), 0.0, 0.3))


class TestSpacetimeSolution:
    def test_terminal_slice_matches_kernel_map(self):
        prob = example_a_problem(160)
        sol = spacetime_solution(prob, n_t=8)
        direct = apply_kernel(linear_kernel(prob), prob.rho0)
        assert np.max(np.abs(sol.rho[-1] - direct.values)) <= 1e-10

    def test_terminal_potential_is_minus_V(self):
        prob = example_a_problem(160)
        sol = spacetime_solution(prob, n_t=8)
        V = prob.energy.potential_on(prob.grid)
        assert np.array_equal(sol.phi[-1], -V)

    def test_initial_slice_is_rho0(self):
        prob = example_a_problem(160)
        sol = spacetime_solution(prob, n_t=8)
        assert np.array_equal(sol.rho[0], prob.rho0.values)

    def test_mass_conserved_on_every_slice(self):
        prob = example_a_problem(320)
        sol = spacetime_solution(prob, n_t=10)
        masses = prob.grid.h_x * sol.rho.sum(axis=1)
        assert np.max(np.abs(masses - 1.0)) <= 1e-6

    def test_quadratic_phi_value_at_origin(self):
        # Phi(0, 0) = 0.5 log 0.5 for x0 = 0, T = 1, beta = 0.5.
        prob = quadratic_problem(320, T=1.0, beta=0.5)
        sol = spacetime_solution(prob, n_t=4)
        j0 = 160  # x = 0 exactly
        assert sol.phi[0, j0] == pytest.approx(0.5 * math.log(0.5), abs=1e-9)


class TestGaussianAnalyticEquivalence:
    def test_phi_and_rho_match_closed_forms(self):
        prob = quadratic_problem(320, T=0.2, beta=0.25, mu0=0.25, sigma0=0.1, x0=0.0)
        n_t = 8
        sol = spacetime_solution(prob, n_t=n_t)
        x = prob.grid.points
        rho0 = GaussianDensity(0.25, 0.01)

        worst_phi = 0.0
        worst_rho = 0.0
        for l, t in enumerate(sol.times):
            phi_exact = quadratic_phi(x, t, 0.0, prob.T, prob.beta)
            worst_phi = max(worst_phi, float(np.max(np.abs(sol.phi[l] - phi_exact))))
            if l == 0:
                rho_exact = rho0.pdf(x)
            else:
                rho_exact = quadratic_rho_t(rho0, 0.0, t, prob.T, prob.beta).pdf(x)
            worst_rho = max(worst_rho, float(np.max(np.abs(sol.rho[l] - rho_exact))))
        assert worst_phi <= 1e-6
        assert worst_rho <= 1e-6

    def test_terminal_density_matches_convolution_algebra(self):
        prob = quadratic_problem(320)
        out = apply_kernel(linear_kernel(prob), prob.rho0)
        exact = quadratic_rho_T(GaussianDensity(0.25, 0.01), 0.0, 0.2, 0.25)
        assert np.max(np.abs(out.values - exact.pdf(prob.grid.points))) <= 1e-6


class TestRecastEquivalence:
    def test_example_a_midtime(self):
        prob = example_a_problem(160)
        direct, recast = rho_recast_check(prob, t=0.1, x=0.0)
        assert direct == pytest.approx(recast, abs=1e-8)

    def test_zero_potential_matches_heat_solution(self):
        grid = Grid1D(5.0, 160)
        rho0 = gaussian_density(grid, 0.25, 0.1)
        prob = ProxProblem(rho0, EnergySpec(name="zero"), 0.2, 0.25, grid)
        t, x = 0.1, 0.25
        direct, recast = rho_recast_check(prob, t, x)
        G = heat_kernel(x, grid.points, t, prob.beta)
        heat_val = grid.h_x * float(np.dot(G, rho0.values))
        assert direct == pytest.approx(heat_val, abs=1e-8)
        assert recast == pytest.approx(heat_val, abs=1e-8)

    def test_quadratic_potential_matches_closed_form(self):
        prob = quadratic_problem(320)
        t, x = 0.1, 0.2083125  # near the transported mean, on-grid not required
        direct, recast = rho_recast_check(prob, t, x)
        exact = quadratic_rho_t(GaussianDensity(0.25, 0.01), 0.0, t, 0.2, 0.25).pdf(x)
        assert direct == pytest.approx(float(exact), abs=1e-6)
        assert recast == pytest.approx(float(exact), abs=1e-6)


def central_dx(a, h):
    return (np.roll(a, -1, axis=-1) - np.roll(a, 1, axis=-1)) / (2 * h)


def lap(a, h):
    return (np.roll(a, -1, axis=-1) + np.roll(a, 1, axis=-1) - 2 * a) / h**2


def _interior_slices(sol):
    # Time derivatives of rho blow up as t -> 0 for narrow initial data, so
    # rate measurements use a fixed mid-time window rather than the slices
    # adjacent to the endpoints.
    T = sol.times[-1]
    return [l for l in range(1, len(sol.times) - 1) if 0.25 * T <= sol.times[l] <= 0.75 * T]


def pde_pair_residuals(sol, beta):
    h = sol.grid.h_x
    h_t = sol.times[1] - sol.times[0]
    rho, phi = sol.rho, sol.phi
    sel = _interior_slices(sol)
    dt_rho = (rho[[l + 1 for l in sel]] - rho[[l - 1 for l in sel]]) / (2 * h_t)
    dt_phi = (phi[[l + 1 for l in sel]] - phi[[l - 1 for l in sel]]) / (2 * h_t)
    mid_rho, mid_phi = rho[sel], phi[sel]
    fp = dt_rho + central_dx(mid_rho * central_dx(mid_phi, h), h) - beta * lap(mid_rho, h)
    hj = dt_phi + 0.5 * central_dx(mid_phi, h) ** 2 + beta * lap(mid_phi, h)
    return float(np.max(np.abs(fp))), float(np.max(np.abs(hj)))


def hopf_cole_residuals(sol, beta):
    h = sol.grid.h_x
    h_t = sol.times[1] - sol.times[0]
    eta = np.exp(sol.phi / (2 * beta))
    eta_hat = sol.rho * np.exp(-sol.phi / (2 * beta))
    sel = _interior_slices(sol)
    up = [l + 1 for l in sel]
    dn = [l - 1 for l in sel]
    bwd = (eta[up] - eta[dn]) / (2 * h_t) + beta * lap(eta[sel], h)
    fwd = (eta_hat[up] - eta_hat[dn]) / (2 * h_t) - beta * lap(eta_hat[sel], h)
    return float(np.max(np.abs(bwd))), float(np.max(np.abs(fwd)))


class TestPdeResidualConvergence:
    def test_pde_pair_residual_halving(self):
        coarse = spacetime_solution(example_a_problem(160), n_t=16)
        fine = spacetime_solution(example_a_problem(320), n_t=32)
        fp_c, hj_c = pde_pair_residuals(coarse, 0.25)
        fp_f, hj_f = pde_pair_residuals(fine, 0.25)
        assert fp_c / fp_f >= 2.5
        assert hj_c / hj_f >= 2.5

    def test_hopf_cole_residual_halving(self):
        coarse = spacetime_solution(example_a_problem(160), n_t=16)
        fine = spacetime_solution(example_a_problem(320), n_t=32)
        bwd_c, fwd_c = hopf_cole_residuals(coarse, 0.25)
        bwd_f, fwd_f = hopf_cole_residuals(fine, 0.25)
        assert bwd_c / bwd_f >= 2.5
        assert fwd_c / fwd_f >= 2.5
