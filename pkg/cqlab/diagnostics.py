"""
Cross-cutting measurements: marginals, the no-backreaction residual,
epsilon-convergence slopes, the signalling metric and the
operator-equivalence residual.

Everything here is deterministic given its inputs; independent runs of a
study may execute concurrently but are assembled in input order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from cqlab.cq_limit import (
    DEFAULT_CAUSTIC_TOL,
    LimitSolution,
    closed_classical_system,
    evolve_limit,
    evolve_limit_direct,
)
from cqlab.errors import StateError
from cqlab.first_order import CorrectionState, corrected_reconstruct, evolve_correction
from cqlab.full_qm import ModelParams, evolve_full
from cqlab.hybrid_hr import (
    CQ_GENERATORS,
    HR_GENERATORS,
    HydroState,
    HydroTrajectory,
    evolve_hydro,
    measurement_branches,
)
from cqlab.numerics import ComplexField2D, Grid2D, PotentialFn, RealField1D, RealField2D, integrate
from cqlab.operators import AveragingKernel, average
from cqlab.polar import (
    DEFAULT_R_MIN,
    PolarState,
    Region,
    change_kernel,
    decompose,
    phase_offset,
    reconstruct,
    support_mask,
)

Scheme = Literal["CQ", "HR"]
EquivalenceRoute = Literal["projected", "lagrangian"]

# relative density below which phases are not compared
PHASE_SUPPORT = 1e-6

# nodes of the coarser spacing counted as the edge band
EDGE_NODES = 4


# ---------------------------------------------------------------------------
# Marginals and moments
# ---------------------------------------------------------------------------

def marginal_rho1(rho: RealField2D) -> RealField1D:
    """Classical marginal: y-quadrature of rho per x-row."""
    return integrate(rho, axes=("y",))


def marginal_rho2(rho: RealField2D) -> RealField1D:
    """Quantum marginal: x-quadrature of rho per y-column."""
    return integrate(rho, axes=("x",))


class Moments(BaseModel):
    """First and second position moments of a density."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mass: float
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov_xy: float


def position_moments(rho: RealField2D) -> Moments:
    grid = rho.grid
    X, Y = grid.mesh()
    w = rho.values
    mass = float(np.sum(w) * grid.dx * grid.dy)
    total = float(np.sum(w))
    mx = float(np.sum(X * w) / total)
    my = float(np.sum(Y * w) / total)
    return Moments(
        mass=mass,
        mean_x=mx,
        mean_y=my,
        var_x=float(np.sum((X - mx) ** 2 * w) / total),
        var_y=float(np.sum((Y - my) ** 2 * w) / total),
        cov_xy=float(np.sum((X - mx) * (Y - my) * w) / total),
    )


def edge_band(grid: Grid2D) -> float:
    """Default edge width for boundary_mass: EDGE_NODES of the coarser spacing."""
    return EDGE_NODES * max(grid.dx, grid.dy)


def boundary_mass(rho: RealField2D, width: float) -> float:
    """Probability at nodes strictly closer than `width` to a box edge."""
    grid = rho.grid
    X, Y = grid.mesh()
    near = (
        (X - grid.x_min < width)
        | (grid.x_max - X < width)
        | (Y - grid.y_min < width)
        | (grid.y_max - Y < width)
    )
    return float(np.sum(rho.values[near]) * grid.dx * grid.dy)


def density(state: PolarState) -> RealField2D:
    return RealField2D(grid=state.grid, values=state.R.values ** 2)


def projective_error(reference: ComplexField2D, candidate: ComplexField2D) -> float:
    """min over |c| = 1 of max|reference - c candidate|, with c from the overlap phase."""
    overlap = np.vdot(candidate.values, reference.values)
    c = overlap / abs(overlap) if abs(overlap) > 0.0 else 1.0
    return float(np.max(np.abs(reference.values - c * candidate.values)))


# ---------------------------------------------------------------------------
# Backreaction
# ---------------------------------------------------------------------------

def hydro_as_limit(trajectory: HydroTrajectory, kernel: AveragingKernel, dt: float) -> LimitSolution:
    """Hydrodynamic snapshots in polar form, for comparisons against limit solutions."""
    return LimitSolution(
        times=trajectory.times,
        snapshots=[s.to_polar(kernel) for s in trajectory.snapshots],
        dt=dt,
    )


def backreaction_residual(
    solution: LimitSolution,
    U: PotentialFn,
    m1: float,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
) -> float:
    """
    Distance between a 2-D solution's classical marginal and the closed classical system.

    The closed pair (rho1, theta_A) is launched from the solution's first
    snapshot on the time grid k*dt. Returns the max over snapshots of
    |rho1(closed) - rho1(2-D)|_1 + max|theta_A(closed) - theta_A(2-D)|, the
    phase taken over rows where rho1 >= PHASE_SUPPORT * max rho1.

    Raises:
        CausticFormed: a caustic inside the solution's horizon
    """
    state0 = solution.snapshots[0]
    grid = state0.grid
    if solution.times.size == 1:
        return 0.0
    dt = solution.dt
    steps = [int(round(float(t) / dt)) for t in solution.times]
    t_grid = dt * np.arange(steps[-1] + 1)
    closed = closed_classical_system(
        grid,
        state0.theta_A,
        marginal_rho1(density(state0)),
        U,
        m1,
        t_grid,
        steps=steps,
        caustic_tol=caustic_tol,
    )
    worst = 0.0
    for row, snap in enumerate(solution.snapshots):
        rho1 = marginal_rho1(density(snap)).values
        mass_err = float(np.sum(np.abs(closed.rho1[row] - rho1)) * grid.dx)
        live = closed.rho1[row] >= PHASE_SUPPORT * float(np.max(closed.rho1[row]))
        phase_err = float(np.max(np.abs(closed.theta_A[row] - snap.theta_A.values)[live]))
        worst = max(worst, mass_err + phase_err)
    return worst


# ---------------------------------------------------------------------------
# Epsilon convergence
# ---------------------------------------------------------------------------

class ConvergenceReport(BaseModel):
    """
    Errors of the zeroth- and first-order approximations against the full solver.

    Attributes:
        epsilons: Strictly decreasing epsilon values
        errors_zeroth, errors_first: Polar-component errors on the support
        psi_errors_zeroth, psi_errors_first: Projective max-abs wave-function errors
        slope_zeroth, slope_first: Least-squares log-log slopes (None for a single epsilon)
        residual_zeroth, residual_first: Max log-space residual of each fit
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    epsilons: list[float]
    errors_zeroth: list[float]
    errors_first: list[float]
    psi_errors_zeroth: list[float]
    psi_errors_first: list[float]
    slope_zeroth: Optional[float] = None
    slope_first: Optional[float] = None
    residual_zeroth: Optional[float] = None
    residual_first: Optional[float] = None


def fit_slope(epsilons: Sequence[float], errors: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    """(slope, max residual) of log(error) against log(eps); None below two points."""
    if len(epsilons) < 2:
        return None, None
    log_e = np.log(np.asarray(epsilons, dtype=float))
    log_err = np.log(np.maximum(np.asarray(errors, dtype=float), np.finfo(float).tiny))
    slope, intercept = np.polyfit(log_e, log_err, 1)
    residual = float(np.max(np.abs(log_err - (slope * log_e + intercept))))
    return float(slope), residual


def polar_error(
    reference: PolarState,
    R: np.ndarray,
    theta_A: np.ndarray,
    theta_B: np.ndarray,
    support_fraction: float,
) -> float:
    """
    Max of the R, theta_A and theta_B errors on the reference support.

    theta_A is compared modulo a global constant fixed by the rho1-weighted
    mean difference.
    """
    mask = support_mask(reference.R.values, support_fraction)
    rho1 = np.sum(reference.R.values ** 2, axis=1)
    rows = rho1 >= support_fraction ** 2 * float(np.max(rho1))
    offset = phase_offset(reference.theta_A.values[rows], theta_A[rows], rho1[rows])
    err_R = float(np.max(np.abs(reference.R.values - R)[mask]))
    err_A = float(np.max(np.abs(reference.theta_A.values - theta_A - offset)[rows]))
    err_B = float(np.max(np.abs(reference.theta_B.values - theta_B)[mask]))
    return max(err_R, err_A, err_B)


class _EpsilonResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    err0: float
    err1: float
    psi_err0: float
    psi_err1: float


def convergence_study(
    state0: PolarState,
    mp: ModelParams,
    epsilons: Sequence[float],
    t_final: float,
    dt: float,
    dt_full: Optional[float] = None,
    r_min: float = DEFAULT_R_MIN,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
    support_fraction: float = 1e-3,
    workers: int = 1,
) -> ConvergenceReport:
    """
    Full solver against the zeroth- and first-order approximations, per epsilon.

    The limit solution and the correction are epsilon-independent and are
    computed once; each epsilon starts the full solver from the
    reconstruction of the same polar data.

    Raises:
        StateError: epsilons not in (0, 1] or repeated
        CausticFormed: caustic before t_final
    """
    eps = sorted({float(e) for e in epsilons}, reverse=True)
    if len(eps) != len(epsilons) or not eps or eps[-1] <= 0.0 or eps[0] > 1.0:
        raise StateError(f"epsilons must be distinct values in (0, 1], got {list(epsilons)}")
    kernel = state0.kernel
    n_steps = int(round(t_final / dt))
    limit = evolve_limit(state0, mp, dt, n_steps, r_min=r_min, caustic_tol=caustic_tol)
    correction = evolve_correction(
        limit, CorrectionState.zero(state0.grid, kernel), mp, kernel, dt, n_steps, r_min=r_min
    )
    zeroth = limit.final
    corr = correction.corrections[-1]
    step_full = dt if dt_full is None else dt_full
    n_full = int(round(t_final / step_full))

    def one(epsilon: float) -> _EpsilonResult:
        full = evolve_full(reconstruct(state0, epsilon), mp.with_epsilon(epsilon), step_full, n_full).final
        ref = decompose(full, epsilon, kernel, r_min)
        err0 = polar_error(ref, zeroth.R.values, zeroth.theta_A.values, zeroth.theta_B.values, support_fraction)
        err1 = polar_error(
            ref,
            zeroth.R.values + epsilon * corr.mu.values,
            zeroth.theta_A.values + epsilon * corr.nu.values,
            zeroth.theta_B.values + epsilon * corr.omega.values,
            support_fraction,
        )
        return _EpsilonResult(
            err0=err0,
            err1=err1,
            psi_err0=projective_error(full, reconstruct(zeroth, epsilon)),
            psi_err1=projective_error(full, corrected_reconstruct(zeroth, corr, epsilon, r_min)),
        )

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, eps))

    errors_zeroth = [r.err0 for r in results]
    errors_first = [r.err1 for r in results]
    slope0, res0 = fit_slope(eps, errors_zeroth)
    slope1, res1 = fit_slope(eps, errors_first)
    return ConvergenceReport(
        epsilons=eps,
        errors_zeroth=errors_zeroth,
        errors_first=errors_first,
        psi_errors_zeroth=[r.psi_err0 for r in results],
        psi_errors_first=[r.psi_err1 for r in results],
        slope_zeroth=slope0,
        slope_first=slope1,
        residual_zeroth=res0,
        residual_first=res1,
    )


# ---------------------------------------------------------------------------
# Signalling
# ---------------------------------------------------------------------------

def _scheme_generators(scheme: Scheme):
    if scheme == "CQ":
        return CQ_GENERATORS
    if scheme == "HR":
        return HR_GENERATORS
    raise StateError(f"scheme must be CQ or HR, got {scheme!r}")


def _steps(t: float, dt: float) -> int:
    return int(round(t / dt)) if t > 0.0 else 0


def signalling_metric(
    scheme: Scheme,
    state0: HydroState,
    region: Region,
    kernel: AveragingKernel,
    mp: ModelParams,
    dt: float,
    t_meas: float,
    t_final: float,
    renormalize: bool = False,
    edge_width: float = 0.5,
    r_min: float = DEFAULT_R_MIN,
) -> float:
    """
    L1 change of the classical marginal at t_final caused by a position
    measurement on y at t_meas.

    The measurement is non-selective: both outcome branches are evolved and
    their marginals summed. With renormalize every branch is rescaled to unit
    mass before evolution and weighted by its outcome probability afterwards.

    Raises:
        StateError: t_meas outside [0, t_final] or unknown scheme
    """
    if not 0.0 <= t_meas <= t_final:
        raise StateError(f"need 0 <= t_meas <= t_final, got t_meas={t_meas}, t_final={t_final}")
    generators = _scheme_generators(scheme)
    n_meas = _steps(t_meas, dt)
    n_rest = _steps(t_final, dt) - n_meas
    grid = state0.grid

    def run(state: HydroState, n: int) -> HydroState:
        if n == 0:
            return state
        return evolve_hydro(state, generators, kernel, mp, dt, n, r_min=r_min).final

    unmeasured = run(state0, n_meas + n_rest)
    at_meas = run(state0, n_meas)
    measured = np.zeros(grid.nx)
    for p, branch in measurement_branches(at_meas, region, edge_width):
        if renormalize:
            branch = HydroState.from_arrays(grid, branch.rho.values / p, branch.theta.values)
        rho1 = marginal_rho1(run(branch, n_rest).rho).values
        measured += p * rho1 if renormalize else rho1
    return float(np.sum(np.abs(measured - marginal_rho1(unmeasured.rho).values)) * grid.dx)


# ---------------------------------------------------------------------------
# Operator equivalence
# ---------------------------------------------------------------------------

def operator_equivalence_residual(
    state0: PolarState,
    mp: ModelParams,
    kernel_to: AveragingKernel,
    dt: float,
    n_steps: int,
    stride: Optional[int] = None,
    r_min: float = DEFAULT_R_MIN,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
    route: EquivalenceRoute = "projected",
) -> float:
    """
    Run the limit dynamics under state0's kernel and under kernel_to; return
    max over snapshots of |theta' - T theta|_inf + |R' - R|_inf, the phase
    taken where R^2 >= PHASE_SUPPORT * max R^2.

    The second run starts from change_kernel(state0, 0, kernel_to).

    route="projected" uses the Eulerian solver with the phase tendency passed
    through each run's own B, so the kernel enters every step. route="lagrangian"
    uses evolve_limit, whose kernel only enters the final projection; there the
    residual is a consistency check of change_kernel and the snapshot split.
    caustic_tol applies to the lagrangian route only.

    Raises:
        StateError: unknown route
    """
    if route == "projected":
        def run(state: PolarState) -> LimitSolution:
            return evolve_limit_direct(state, mp, dt, n_steps, stride, r_min, project=True)
    elif route == "lagrangian":
        def run(state: PolarState) -> LimitSolution:
            return evolve_limit(state, mp, dt, n_steps, stride, r_min, caustic_tol)
    else:
        raise StateError(f"route must be projected or lagrangian, got {route!r}")
    kernel_from = state0.kernel
    one = run(state0)
    two = run(change_kernel(state0, 0.0, kernel_to))
    worst = 0.0
    for a, b in zip(one.snapshots, two.snapshots):
        theta = a.theta()
        mapped = theta + average(kernel_from, theta) - average(kernel_to, theta)
        live = support_mask(a.R.values ** 2, PHASE_SUPPORT)
        err = float(np.max(np.abs(b.theta() - mapped)[live])) + float(np.max(np.abs(b.R.values - a.R.values)))
        worst = max(worst, err)
    return worst
