"""Finite-difference mean-field control solver (primal-dual hybrid gradient).

Independent route to the regularized proximal: discretize

    min  h_t h_x sum ||m||^2 / (2 rho)  +  Fhat(rho(T))
    s.t. (rho^{l+1} - rho^l)/h_t + div m^{l+1} - beta lap rho^{l+1} = 0

with the split-flux upwind divergence and a periodic second-difference
Laplacian, and solve the saddle problem with PDHG. The terminal density
rho_M is what the kernel formulas are cross-validated against.

Internally each constraint row is scaled by h_t (residual in density units),
which conditions the operator so that the time-difference part does not
dominate the norm. The dual array is h_x times the physical multiplier; the
reported potential slices undo that scale.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .energy import EnergySpec, first_variation
from .errors import NewtonDivergence, RootFindFailure, StepSizeViolation
from .grid import DensityField, Grid1D, GridFn
from .kernels import ProxProblem, SpaceTimeSolution

RHO_MIN = 1e-10  # floor keeping the kinetic term finite where density vanishes

try:  # compiled tridiagonal sweeps; pure-numpy fallback below
    from numba import njit as _njit

    @_njit(cache=True)
    def _ldl_solve_inplace(rhat, l, d):  # pragma: no cover - thin compiled shim
        n_f, n_t = rhat.shape
        for i in range(n_f):
            for k in range(1, n_t):
                rhat[i, k] -= l[i, k - 1] * rhat[i, k - 1]
            for k in range(n_t):
                rhat[i, k] /= d[i, k]
            for k in range(n_t - 2, -1, -1):
                rhat[i, k] -= l[i, k] * rhat[i, k + 1]

    _HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _HAVE_NUMBA = False


@dataclass
class PdhgConfig:
    """Solver hyperparameters.

    With precondition=True (default) the dual ascent runs in the metric of
    the constraint normal operator A A^T, whose induced operator norm is 1,
    and tau/sigma default to 0.95. With precondition=False the steps default
    to 0.95 / L with L from power iteration on the raw operator. Both modes
    enforce tau * sigma * L^2 <= 1 for the operator norm of the mode in use.
    """

    n_t: int = 64
    tau: Optional[float] = None
    sigma: Optional[float] = None
    theta: float = 1.0
    max_iters: int = 200_000
    tol: float = 1e-7
    min_iters: int = 200
    log_every: int = 25
    precondition: bool = True
    flux_scheme: str = "centered"
    time_scheme: str = "cn"
    lap_order: int = 2
    flux_order: int = 2

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError("n_t must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


def default_n_t(T: float) -> int:
    """Time resolution used by the experiment presets."""
    return 64 if T <= 0.2 else 128


@dataclass
class PdhgState:
    """Primal/dual variables; rho keeps slice 0 pinned to rho_0."""

    rho: np.ndarray      # (n_t + 1, n_x), rho[0] == rho0 always
    m_plus: np.ndarray   # (n_t, n_x), slices l = 1..n_t
    m_minus: np.ndarray  # (n_t, n_x)
    phi: np.ndarray      # (n_t, n_x), rows l = 0..n_t - 1, h_x-scaled multiplier
    rho_bar: np.ndarray = field(default=None)
    m_bar: np.ndarray = field(default=None)


@dataclass
class PdhgLog:
    iters: np.ndarray
    primal_change: np.ndarray
    lagrangian: np.ndarray
    mass_error: np.ndarray
    n_iters: int
    converged: bool
    operator_norm: float
    tau: float
    sigma: float


def _dx_plus(a, h):
    return (np.roll(a, -1, axis=-1) - a) / h


def _dx_minus(a, h):
    return (a - np.roll(a, 1, axis=-1)) / h


def _lap(a, h):
    return (np.roll(a, -1, axis=-1) + np.roll(a, 1, axis=-1) - 2.0 * a) / h**2


def _lap4(a, h):
    # Fourth-order accurate periodic second difference.
    return (
        -np.roll(a, -2, axis=-1) / 12.0
        + 4.0 * np.roll(a, -1, axis=-1) / 3.0
        - 2.5 * a
        + 4.0 * np.roll(a, 1, axis=-1) / 3.0
        - np.roll(a, 2, axis=-1) / 12.0
    ) / h**2


def _upwind_div(mp, mm, h):
    # Donor-cell divergence for nonnegative magnitudes, flux m = mp - mm.
    return _dx_minus(mp, h) - _dx_plus(mm, h)


def _centered_div(mp, mm, h):
    m = mp - mm
    return (np.roll(m, -1, axis=-1) - np.roll(m, 1, axis=-1)) / (2.0 * h)


def _dx_c4(a, h):
    # Fourth-order centered first derivative.
    return (
        -np.roll(a, -2, axis=-1)
        + 8.0 * np.roll(a, -1, axis=-1)
        - 8.0 * np.roll(a, 1, axis=-1)
        + np.roll(a, 2, axis=-1)
    ) / (12.0 * h)


@dataclass(frozen=True)
class Discretization:
    """Space-time stencils of the continuity constraint.

    flux_scheme "upwind" is the first-order donor-cell split; "centered"
    treats m = m+ - m- with a second-order centered divergence. time_scheme
    "be" puts the diffusion fully on the new slice (backward Euler); "cn"
    averages it over both slices (Crank-Nicolson), making the interval flux
    second-order in time as well.
    """

    grid: Grid1D
    n_t: int
    h_t: float
    beta: float
    flux_scheme: str = "centered"
    time_scheme: str = "cn"
    lap_order: int = 2
    flux_order: int = 2

    def __post_init__(self):
        if self.flux_scheme not in ("upwind", "centered"):
            raise ValueError(f"unknown flux scheme {self.flux_scheme!r}")
        if self.time_scheme not in ("be", "cn"):
            raise ValueError(f"unknown time scheme {self.time_scheme!r}")
        if self.lap_order not in (2, 4):
            raise ValueError(f"lap_order must be 2 or 4, got {self.lap_order}")
        if self.flux_order not in (2, 4):
            raise ValueError(f"flux_order must be 2 or 4, got {self.flux_order}")
        if self.flux_scheme == "upwind" and self.flux_order != 2:
            raise ValueError("upwind flux is first-order only; flux_order applies to centered")

    def _lap(self, a):
        h = self.grid.h_x
        return _lap(a, h) if self.lap_order == 2 else _lap4(a, h)

    def _div(self, mp, mm):
        h = self.grid.h_x
        if self.flux_scheme == "upwind":
            return _upwind_div(mp, mm, h)
        if self.flux_order == 2:
            return _centered_div(mp, mm, h)
        return _dx_c4(mp - mm, h)

    def residual(self, rho_full, mp, mm):
        """Continuity residual in 1/time units at rows l = 0..n_t-1."""
        return self.forward_scaled(rho_full[1:], mp, mm, rho_full[0]) / self.h_t

    def forward_scaled(self, rho_var, mp, mm, rho0):
        """h_t times the continuity residual; rho_var holds slices 1..n_t."""
        prev = np.vstack([rho0[None, :], rho_var[:-1]])
        if self.time_scheme == "be":
            diff = -self.h_t * self.beta * self._lap(rho_var)
        else:
            diff = -0.5 * self.h_t * self.beta * (self._lap(rho_var) + self._lap(prev))
        return rho_var - prev + self.h_t * self._div(mp, mm) + diff

    def adjoint_scaled(self, phi):
        """Plain transpose of the homogeneous part of forward_scaled."""
        h = self.grid.h_x
        c = self.h_t * self.beta if self.time_scheme == "be" else 0.5 * self.h_t * self.beta
        at_rho = phi - c * self._lap(phi)
        if self.time_scheme == "be":
            at_rho[:-1] -= phi[1:]
        else:
            at_rho[:-1] -= phi[1:] + c * self._lap(phi[1:])
        if self.flux_scheme == "upwind":
            at_mp = -self.h_t * _dx_plus(phi, h)
            at_mm = self.h_t * _dx_minus(phi, h)
        else:
            if self.flux_order == 2:
                dc = (np.roll(phi, -1, axis=-1) - np.roll(phi, 1, axis=-1)) / (2.0 * h)
            else:
                dc = _dx_c4(phi, h)
            at_mp = -self.h_t * dc
            at_mm = self.h_t * dc
        return at_rho, at_mp, at_mm

def constraint_apply(
    state: PdhgState,
    grid: Grid1D,
    h_t: float,
    beta: float,
    flux_scheme: str = "upwind",
    time_scheme: str = "be",
) -> np.ndarray:
    """Continuity residual (rho^{l+1}-rho^l)/h_t + div m^{l+1} - beta lap rho.

    Defaults to the first-order stencils (donor-cell flux, diffusion on the
    new slice); pass scheme names to evaluate other discretizations.
    """
    disc = Discretization(grid, state.phi.shape[0], h_t, beta, flux_scheme, time_scheme)
    return disc.residual(state.rho, state.m_plus, state.m_minus)


class DualPreconditioner:
    """Inverse of the constraint normal operator A A^T.

    The periodic grid makes A A^T diagonal in x-frequency; for each frequency
    the time coupling is a symmetric positive definite tridiagonal matrix,
    factored once as LDL^T and applied by forward/back substitution.
    """

    def __init__(self, disc: Discretization):
        grid, n_t, h_t, beta = disc.grid, disc.n_t, disc.h_t, disc.beta
        theta = 2.0 * np.pi * np.fft.rfftfreq(grid.n_x)
        if disc.lap_order == 2:
            lam = (2.0 * np.cos(theta) - 2.0) / grid.h_x**2  # stencil symbol, <= 0
        else:
            lam = (
                -np.cos(2.0 * theta) / 6.0 + 8.0 * np.cos(theta) / 3.0 - 2.5
            ) / grid.h_x**2
        if disc.time_scheme == "be":
            g = 1.0 - h_t * beta * lam  # new-slice coefficient
            e = np.ones_like(lam)       # old-slice coefficient
        else:
            g = 1.0 - 0.5 * h_t * beta * lam
            e = 1.0 + 0.5 * h_t * beta * lam
        if disc.flux_scheme == "upwind":
            flux = -2.0 * h_t**2 * lam
        elif disc.flux_order == 2:
            flux = 2.0 * h_t**2 * (np.sin(theta) / grid.h_x) ** 2
        else:
            sym = (8.0 * np.sin(theta) - np.sin(2.0 * theta)) / (6.0 * grid.h_x)
            flux = 2.0 * h_t**2 * sym**2
        n_f = len(lam)
        diag = np.empty((n_f, n_t))
        diag[:, 0] = g**2 + flux
        diag[:, 1:] = (g**2 + e**2 + flux)[:, None]
        off = np.tile((-g * e)[:, None], (1, n_t - 1))

        self.n_x = grid.n_x
        self.n_t = n_t
        self.d = np.empty_like(diag)
        self.l = np.empty_like(off)
        self.d[:, 0] = diag[:, 0]
        for k in range(1, n_t):
            self.l[:, k - 1] = off[:, k - 1] / self.d[:, k - 1]
            self.d[:, k] = diag[:, k] - self.l[:, k - 1] ** 2 * self.d[:, k - 1]

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Solve (A A^T) z = r for a (n_t, n_x) right-hand side."""
        rhat = np.fft.rfft(r, axis=1).T.copy()  # (n_f, n_t)
        for k in range(1, self.n_t):
            rhat[:, k] -= self.l[:, k - 1] * rhat[:, k - 1]
        rhat /= self.d
        for k in range(self.n_t - 2, -1, -1):
            rhat[:, k] -= self.l[:, k] * rhat[:, k + 1]
        return np.fft.irfft(rhat.T, n=self.n_x, axis=1)


def estimate_operator_norm(
    disc: Discretization,
    iters: int = 50,
    preconditioner: Optional[DualPreconditioner] = None,
):
    """Largest singular value of the scaled constraint operator (power iteration).

    With a preconditioner the norm is measured in the A A^T dual metric,
    where it equals 1 up to factorization round-off.
    """
    rng = np.random.default_rng(0)
    n_t, n_x = disc.n_t, disc.grid.n_x
    zero = np.zeros(n_x)
    rho = rng.standard_normal((n_t, n_x))
    mp = rng.standard_normal((n_t, n_x))
    mm = rng.standard_normal((n_t, n_x))
    norm = 1.0
    for _ in range(iters):
        v = disc.forward_scaled(rho, mp, mm, zero)
        if preconditioner is not None:
            v = preconditioner.apply(v)
        rho, mp, mm = disc.adjoint_scaled(v)
        norm = math.sqrt(np.sum(rho**2) + np.sum(mp**2) + np.sum(mm**2))
        rho /= norm
        mp /= norm
        mm /= norm
    v = disc.forward_scaled(rho, mp, mm, zero)
    if preconditioner is not None:
        return float(np.sqrt(np.sum(v * preconditioner.apply(v))))
    return float(np.sqrt(np.sum(v**2)))


def kinetic_prox(rho_tilde, m_plus_tilde, m_minus_tilde, tau, g_prime=None, rho_min=RHO_MIN):
    """Pointwise prox of ||m||^2/(2 rho) [+ g(rho)] in the Euclidean metric.

    Minimizes ||m||^2/(2 rho) + g(rho) + (|rho - rho_tilde|^2 + ||m - m_tilde||^2)/(2 tau)
    over rho >= rho_min, m+ >= 0, m- >= 0. Eliminating m reduces the problem
    to the monotone scalar equation

        (rho - rho_tilde)/tau + g'(rho) - ||m_tilde_+||^2 / (2 (rho + tau)^2) = 0,

    a cubic when g is absent (solved by safeguarded Newton) and still
    monotone for convex g (solved by bracketing bisection). The flux then
    follows as m = rho * max(m_tilde, 0) / (rho + tau).
    """
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    mp_pos = np.maximum(np.asarray(m_plus_tilde, dtype=float), 0.0)
    mm_pos = np.maximum(np.asarray(m_minus_tilde, dtype=float), 0.0)
    M = mp_pos**2 + mm_pos**2

    if g_prime is None:
        rho = _newton_kinetic_root(rho_tilde, M, tau, rho_min)
    else:
        rho = _bisect_kinetic_root(rho_tilde, M, tau, g_prime, rho_min)

    scale = rho / (rho + tau)
    return rho, scale * mp_pos, scale * mm_pos


def _newton_kinetic_root(rho_tilde, M, tau, rho_min):
    # Where psi(rho_min) >= 0 the constrained minimizer sits on the floor.
    psi_floor = (rho_min - rho_tilde) / tau - M / (2.0 * (rho_min + tau) ** 2)
    floor = psi_floor >= 0.0
    rt = np.where(floor, rho_min, rho_tilde)
    Ms = np.where(floor, 0.0, M)
    # psi is increasing and concave on (-tau, inf) and the root is >= rt, so
    # starting at max(rt, rho_min) keeps every Newton iterate left of the
    # root and the sequence increases monotonically onto it.
    rho = np.maximum(rt, rho_min)
    for _ in range(100):
        psi = (rho - rt) / tau - Ms / (2.0 * (rho + tau) ** 2)
        dpsi = 1.0 / tau + Ms / (rho + tau) ** 3
        step = psi / dpsi
        rho = rho - step
        if np.max(np.abs(step)) <= 1e-12:
            return np.where(floor, rho_min, np.maximum(rho, rho_min))
    raise RootFindFailure("kinetic prox Newton did not reach 1e-12 in 100 iterations")


def _bisect_kinetic_root(rho_tilde, M, tau, g_prime, rho_min):
    def psi(r):
        return (r - rho_tilde) / tau + g_prime(r) - M / (2.0 * (r + tau) ** 2)

    lo = np.full_like(rho_tilde, rho_min)
    hi = np.maximum(rho_tilde + 1.0, 1.0)
    for _ in range(80):
        bad = psi(hi) <= 0.0
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise NewtonDivergence("could not bracket the terminal prox root")

    at_floor = psi(lo) >= 0.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        below = psi(mid) < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    rho = 0.5 * (lo + hi)
    return np.where(at_floor, rho_min, np.maximum(rho, rho_min))


def terminal_prox(
    q_tilde: GridFn,
    spec: EnergySpec,
    tau: float,
    interaction_at: Optional[np.ndarray] = None,
    rho_min: float = RHO_MIN,
) -> GridFn:
    """Pointwise prox of the terminal energy integrand.

    Linear and interaction parts shift the anchor exactly (the interaction
    is linearized at interaction_at, default the anchor itself); an internal
    part turns the optimality condition into a monotone scalar equation
    solved by bisection.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    grid = q_tilde.grid
    shift = spec.potential_on(grid)
    Wm = spec.interaction_matrix(grid)
    if Wm is not None:
        ref = q_tilde.values if interaction_at is None else np.asarray(interaction_at)
        shift = shift + grid.h_x * (Wm @ ref)
    anchor = q_tilde.values - tau * shift

    if spec.internal_derivative is None:
        return GridFn(grid, np.maximum(anchor, rho_min))

    x = grid.points

    def psi(q):
        return (q - anchor) / tau + spec.internal_derivative(q, x)

    lo = np.full(grid.n_x, rho_min)
    hi = np.maximum(anchor + 1.0, 1.0)
    for _ in range(80):
        bad = psi(hi) <= 0.0
        if not np.any(bad):
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise NewtonDivergence("terminal prox could not bracket its root")
    at_floor = psi(lo) >= 0.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        below = psi(mid) < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    q = np.where(at_floor, rho_min, 0.5 * (lo + hi))
    return GridFn(grid, q)


def _discrete_lagrangian(problem, state, disc):
    grid = problem.grid
    h = grid.h_x
    h_t = disc.h_t
    rho_var = state.rho[1:]
    kin = h_t * h * float(
        np.sum((state.m_plus**2 + state.m_minus**2) / (2.0 * np.maximum(rho_var, RHO_MIN)))
    )
    terminal = GridFn(grid, state.rho[-1])
    from .energy import eval_energy

    energy = eval_energy(problem.energy, terminal)
    residual_scaled = disc.forward_scaled(
        rho_var, state.m_plus, state.m_minus, problem.rho0.values
    )
    coupling = float(np.sum(state.phi * residual_scaled))
    return kin + energy + coupling


def solve_mfc(problem: ProxProblem, config: PdhgConfig):
    """Run PDHG on the discrete saddle problem.

    Returns (trajectory, rho_M, log): the space-time solution, the terminal
    density, and the iteration log. Convergence is declared when the
    relative primal change drops below config.tol; otherwise the solver
    stops at max_iters and reports converged=False.
    """
    grid, beta = problem.grid, problem.beta
    h = grid.h_x
    n_t = config.n_t
    h_t = problem.T / n_t
    rho0 = problem.rho0.values

    disc = Discretization(
        grid,
        n_t,
        h_t,
        beta,
        config.flux_scheme,
        config.time_scheme,
        config.lap_order,
        config.flux_order,
    )
    precond = DualPreconditioner(disc) if config.precondition else None
    L = estimate_operator_norm(disc, preconditioner=precond)
    tau = config.tau if config.tau is not None else 0.95 / L
    sigma = config.sigma if config.sigma is not None else 0.95 / L
    if tau * sigma * L**2 > 1.0 + 1e-9:
        raise StepSizeViolation(
            f"tau*sigma*L^2 = {tau * sigma * L**2:.4f} exceeds 1 (L = {L:.4g})"
        )

    V = problem.energy.potential_on(grid)
    Wm = problem.energy.interaction_matrix(grid)
    U_prime = problem.energy.internal_derivative
    x = grid.points
    tau_point = tau * h_t * h  # pointwise prox step in the kinetic metric

    rho = np.tile(rho0, (n_t, 1))
    mp = np.zeros((n_t, grid.n_x))
    mm = np.zeros((n_t, grid.n_x))
    phi = np.zeros((n_t, grid.n_x))

    iters, changes, lagrangians, mass_errors = [], [], [], []
    converged = False
    state = PdhgState(np.vstack([rho0[None, :], rho]), mp, mm, phi)

    it = 0
    for it in range(1, config.max_iters + 1):
        at_rho, at_mp, at_mm = disc.adjoint_scaled(phi)
        rho_t = rho - tau * at_rho
        mp_t = mp - tau * at_mp
        mm_t = mm - tau * at_mm

        # Terminal slice: exact joint prox of kinetic + energy terms. Linear
        # and interaction parts shift the anchor (interaction linearized at
        # the current iterate), an internal part joins the scalar root.
        shift = V.copy()
        if Wm is not None:
            shift = shift + h * (Wm @ rho[-1])
        rho_t[-1] -= tau_point * shift / h_t
        g_prime = None
        if U_prime is not None:
            g_prime = lambda r: U_prime(r, x) / h_t  # noqa: E731

        new_rho = np.empty_like(rho)
        new_mp = np.empty_like(mp)
        new_mm = np.empty_like(mm)
        new_rho[:-1], new_mp[:-1], new_mm[:-1] = kinetic_prox(
            rho_t[:-1], mp_t[:-1], mm_t[:-1], tau_point
        )
        new_rho[-1], new_mp[-1], new_mm[-1] = kinetic_prox(
            rho_t[-1], mp_t[-1], mm_t[-1], tau_point, g_prime=g_prime
        )

        rho_bar = new_rho + config.theta * (new_rho - rho)
        mp_bar = new_mp + config.theta * (new_mp - mp)
        mm_bar = new_mm + config.theta * (new_mm - mm)
        residual = disc.forward_scaled(rho_bar, mp_bar, mm_bar, rho0)
        phi = phi + sigma * (precond.apply(residual) if precond is not None else residual)

        num = math.sqrt(
            np.sum((new_rho - rho) ** 2) + np.sum((new_mp - mp) ** 2) + np.sum((new_mm - mm) ** 2)
        )
        den = max(1.0, math.sqrt(np.sum(rho**2) + np.sum(mp**2) + np.sum(mm**2)))
        change = num / den

        rho, mp, mm = new_rho, new_mp, new_mm

        if it % config.log_every == 0 or it == 1 or (change <= config.tol and it >= config.min_iters):
            state = PdhgState(
                np.vstack([rho0[None, :], rho]), mp, mm, phi, rho_bar, (mp_bar, mm_bar)
            )
            masses = h * state.rho.sum(axis=1)
            iters.append(it)
            changes.append(change)
            lagrangians.append(_discrete_lagrangian(problem, state, disc))
            mass_errors.append(float(np.max(np.abs(masses - 1.0))))

        if change <= config.tol and it >= config.min_iters:
            converged = True
            break

    state = PdhgState(np.vstack([rho0[None, :], rho]), mp, mm, phi)
    log = PdhgLog(
        iters=np.asarray(iters),
        primal_change=np.asarray(changes),
        lagrangian=np.asarray(lagrangians),
        mass_error=np.asarray(mass_errors),
        n_iters=it,
        converged=converged,
        operator_norm=L,
        tau=tau,
        sigma=sigma,
    )

    rho_M = DensityField(grid, rho[-1], mass_tol=1e-3 if converged else np.inf)
    if converged:
        rho_M.require_unit_mass(5e-4)
    terminal_multiplier = -first_variation(problem.energy, rho_M).values
    phi_slices = np.vstack([phi / h, terminal_multiplier[None, :]])
    times = np.arange(n_t + 1) * h_t
    trajectory = SpaceTimeSolution(
        grid,
        times,
        np.vstack([rho0[None, :], rho]),
        phi_slices,
        mass_tol=5e-4 if converged else np.inf,
    )
    return trajectory, rho_M, log
