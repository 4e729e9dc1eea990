"""
Hydrodynamic (rho, theta) form of the classical-quantum limit and of the
Hall-Reginatto hybrid equations.

    limit:  d(rho, theta) = X_C + X_Q
    HR:     d(rho, theta) = X_HR = X_C + X_Q + X_I

X_I is the non-local interaction term through which a position measurement
on y changes the classical marginal.

Phase derivatives use second-order differences (theta is not periodic);
flux derivatives are spectral.
"""

from __future__ import annotations

import math
from typing import Iterable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from cqlab.errors import AmplitudeFloorBreached, BlowUpDetected, StateError
from cqlab.full_qm import ModelParams, snapshot_steps
from cqlab.numerics import (
    Grid2D,
    RealField2D,
    fd_derivative,
    spectral_derivative,
)
from cqlab.operators import AveragingKernel, average
from cqlab.polar import DEFAULT_R_MIN, PolarState, Region, interior_nodes

Generator = Literal["XC", "XQ", "XI"]
CQ_GENERATORS: tuple[Generator, ...] = ("XC", "XQ")
HR_GENERATORS: tuple[Generator, ...] = ("XC", "XQ", "XI")

# relative density below which the phase is not compared
SUPPORT_DENSITY = 1e-6

Tangent = tuple[np.ndarray, np.ndarray]


class HydroState(BaseModel):
    """
    Density and total non-local phase.

    Attributes:
        rho: Probability density R^2
        theta: Total phase theta_A + theta_B
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    rho: RealField2D
    theta: RealField2D

    @model_validator(mode="after")
    def _check(self) -> "HydroState":
        if self.theta.grid != self.rho.grid:
            raise ValueError("rho and theta must share one grid")
        if np.any(self.rho.values < 0.0):
            raise ValueError("rho must be nonnegative")
        return self

    @property
    def grid(self) -> Grid2D:
        return self.rho.grid

    def mass(self) -> float:
        grid = self.grid
        return float(np.sum(self.rho.values) * grid.dx * grid.dy)

    @classmethod
    def from_arrays(cls, grid: Grid2D, rho: np.ndarray, theta: np.ndarray) -> "HydroState":
        return cls(rho=RealField2D(grid=grid, values=rho), theta=RealField2D(grid=grid, values=theta))

    @classmethod
    def from_polar(cls, state: PolarState) -> "HydroState":
        return cls.from_arrays(state.grid, state.R.values ** 2, state.theta())

    def to_polar(self, kernel: AveragingKernel) -> PolarState:
        """Split theta under a kernel: theta_A = A theta, theta_B = B theta."""
        theta = self.theta.values
        row = kernel.row_average(theta)
        return PolarState.from_arrays(
            self.grid, kernel, R=np.sqrt(self.rho.values), theta_A=row, theta_B=theta - row[:, None]
        )


class HydroTrajectory(BaseModel):
    """Snapshots of evolve_hydro, with the largest relative mass change."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    times: np.ndarray
    snapshots: list[HydroState]
    mass_drift: float

    @property
    def final(self) -> HydroState:
        return self.snapshots[-1]


class CommutationReport(BaseModel):
    """
    Flow-commutation measurements in max-abs over both slots (theta on the
    support only, where rho >= SUPPORT_DENSITY * max rho).

    Attributes:
        commutator: |F_t^XC F_s^XQ - F_s^XQ F_t^XC|
        splitting_defect: |F_t^(XC+XQ) - F_t^XC F_t^XQ|
        hr_commutator: |F_t^(XC+XI) F_s^XQ - F_s^XQ F_t^(XC+XI)|
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    commutator: float
    splitting_defect: float
    hr_commutator: float


class _Context(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid2D
    kernel: AveragingKernel
    m1: float
    m2: float
    U: np.ndarray
    V: np.ndarray
    r_min: float


def _context(grid: Grid2D, kernel: AveragingKernel, mp: ModelParams, r_min: float) -> _Context:
    X, Y = grid.mesh()
    return _Context(
        grid=grid,
        kernel=kernel,
        m1=mp.m1,
        m2=mp.m2,
        U=mp.sample_U(grid.x)[:, None],
        V=mp.sample_V(X, Y),
        r_min=r_min,
    )


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------

def _phase_d(theta: np.ndarray, grid: Grid2D, axis: int) -> np.ndarray:
    return fd_derivative(theta, grid.spacing(axis), axis, 1, periodic=False)


def _flux_d(flux: np.ndarray, grid: Grid2D, axis: int) -> np.ndarray:
    if grid.is_periodic(axis):
        return spectral_derivative(flux, grid.wavenumbers(axis), axis, 1)
    return fd_derivative(flux, grid.spacing(axis), axis, 1, periodic=False)


def quantum_potential(rho: np.ndarray, grid: Grid2D, m2: float, r_min: float = DEFAULT_R_MIN) -> np.ndarray:
    """
    (1/2m2) d_yy sqrt(rho) / sqrt(rho), zero where sqrt(rho) < r_min.

    Raises:
        AmplitudeFloorBreached: sqrt(rho) below r_min inside the support
    """
    amp = np.sqrt(np.maximum(rho, 0.0))
    if interior_nodes(amp, r_min).any():
        raise AmplitudeFloorBreached(f"sqrt(rho) fell below r_min={r_min:g} inside the support")
    if grid.periodic_y:
        curv = spectral_derivative(amp, grid.wavenumbers("y"), 1, 2)
    else:
        curv = fd_derivative(amp, grid.dy, 1, 2, periodic=False)
    live = amp >= r_min
    return np.where(live, curv / np.where(live, amp, 1.0), 0.0) / (2.0 * m2)


# ---------------------------------------------------------------------------
# Vector fields on raw arrays
# ---------------------------------------------------------------------------

def _split(theta: np.ndarray, c: _Context) -> tuple[np.ndarray, np.ndarray]:
    theta_A = average(c.kernel, theta)
    return theta_A, theta - theta_A


def _xc(rho: np.ndarray, theta: np.ndarray, c: _Context) -> Tangent:
    theta_A, theta_B = _split(theta, c)
    ax = _phase_d(theta_A, c.grid, 0)
    bx = _phase_d(theta_B, c.grid, 0)
    d_rho = -_flux_d(ax * rho / c.m1, c.grid, 0)
    d_theta = -(ax ** 2 + 2.0 * ax * bx) / (2.0 * c.m1) - c.U
    return d_rho, d_theta


def _xq(rho: np.ndarray, theta: np.ndarray, c: _Context) -> Tangent:
    ty = _phase_d(theta, c.grid, 1)
    d_rho = -_flux_d(ty * rho / c.m2, c.grid, 1)
    inner = -ty ** 2 / (2.0 * c.m2) + quantum_potential(rho, c.grid, c.m2, c.r_min)
    d_theta = inner - average(c.kernel, inner) - c.V
    return d_rho, d_theta


def _xi(rho: np.ndarray, theta: np.ndarray, c: _Context) -> Tangent:
    _, theta_B = _split(theta, c)
    bx = _phase_d(theta_B, c.grid, 0)
    ty = _phase_d(theta, c.grid, 1)
    d_rho = -_flux_d(bx * rho / c.m1, c.grid, 0)
    inner = -ty ** 2 / (2.0 * c.m2) + quantum_potential(rho, c.grid, c.m2, c.r_min)
    d_theta = -bx ** 2 / (2.0 * c.m1) + average(c.kernel, inner)
    return d_rho, d_theta


def _xhr(rho: np.ndarray, theta: np.ndarray, c: _Context) -> Tangent:
    tx = _phase_d(theta, c.grid, 0)
    ty = _phase_d(theta, c.grid, 1)
    d_rho = -_flux_d(tx * rho / c.m1, c.grid, 0) - _flux_d(ty * rho / c.m2, c.grid, 1)
    d_theta = (
        -tx ** 2 / (2.0 * c.m1)
        - ty ** 2 / (2.0 * c.m2)
        + quantum_potential(rho, c.grid, c.m2, c.r_min)
        - (c.U + c.V)
    )
    return d_rho, d_theta


_FIELDS = {"XC": _xc, "XQ": _xq, "XI": _xi}


def _generator_sum(generators: Iterable[str]):
    names = tuple(sorted(set(generators)))
    unknown = set(names) - set(_FIELDS)
    if unknown or not names:
        raise StateError(f"generators must be a nonempty subset of XC, XQ, XI; got {sorted(generators)}")
    if names == tuple(sorted(HR_GENERATORS)):
        return _xhr
    parts = [_FIELDS[n] for n in names]

    def field(rho: np.ndarray, theta: np.ndarray, c: _Context) -> Tangent:
        d_rho = np.zeros_like(rho)
        d_theta = np.zeros_like(theta)
        for part in parts:
            a, b = part(rho, theta, c)
            d_rho += a
            d_theta += b
        return d_rho, d_theta

    return field


# ---------------------------------------------------------------------------
# Public vector fields
# ---------------------------------------------------------------------------

def field_XC(state: HydroState, kernel: AveragingKernel, mp: ModelParams) -> Tangent:
    """Classical field: (-d_x(v1 rho), -(1/2m1)[(d_x A theta)^2 + 2 d_x A theta d_x B theta] - U)."""
    return _xc(state.rho.values, state.theta.values, _context(state.grid, kernel, mp, DEFAULT_R_MIN))


def field_XQ(state: HydroState, kernel: AveragingKernel, mp: ModelParams, r_min: float = DEFAULT_R_MIN) -> Tangent:
    """Quantum field: (-d_y((1/m2) theta_y rho), B[-(1/2m2) theta_y^2 + Q] - V)."""
    return _xq(state.rho.values, state.theta.values, _context(state.grid, kernel, mp, r_min))


def field_XI(state: HydroState, kernel: AveragingKernel, mp: ModelParams, r_min: float = DEFAULT_R_MIN) -> Tangent:
    """Interaction field X_HR - X_C - X_Q."""
    return _xi(state.rho.values, state.theta.values, _context(state.grid, kernel, mp, r_min))


def field_XHR(state: HydroState, kernel: AveragingKernel, mp: ModelParams, r_min: float = DEFAULT_R_MIN) -> Tangent:
    """Local hydrodynamic field of the Hall-Reginatto scheme (the kernel is unused)."""
    return _xhr(state.rho.values, state.theta.values, _context(state.grid, kernel, mp, r_min))


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

def _rk4(field, rho: np.ndarray, theta: np.ndarray, c: _Context, dt: float, n_steps: int, t0: float = 0.0):
    """Yield (step, rho, theta) after every RK4 step."""
    for k in range(1, n_steps + 1):
        a_r, a_t = field(rho, theta, c)
        b_r, b_t = field(rho + 0.5 * dt * a_r, theta + 0.5 * dt * a_t, c)
        c_r, c_t = field(rho + 0.5 * dt * b_r, theta + 0.5 * dt * b_t, c)
        d_r, d_t = field(rho + dt * c_r, theta + dt * c_t, c)
        rho = rho + dt / 6.0 * (a_r + 2.0 * b_r + 2.0 * c_r + d_r)
        theta = theta + dt / 6.0 * (a_t + 2.0 * b_t + 2.0 * c_t + d_t)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(theta))):
            raise BlowUpDetected(f"hydrodynamic stepper diverged at t={t0 + k * dt:.6g}")
        yield k, rho, theta


def _snapshot(grid: Grid2D, rho: np.ndarray, theta: np.ndarray) -> HydroState:
    # roundoff in the far tails can leave rho at -1e-17
    return HydroState.from_arrays(grid, np.maximum(rho, 0.0), theta)


def evolve_hydro(
    state0: HydroState,
    generators: Iterable[Generator],
    kernel: AveragingKernel,
    mp: ModelParams,
    dt: float,
    n_steps: int,
    stride: Optional[int] = None,
    r_min: float = DEFAULT_R_MIN,
) -> HydroTrajectory:
    """
    RK4 on the sum of the selected vector fields.

    Raises:
        StateError: dt < 0 or an unknown generator
        AmplitudeFloorBreached: sqrt(rho) below r_min inside the support
        BlowUpDetected: non-finite values
    """
    if dt < 0.0 or n_steps < 0:
        raise StateError(f"need dt >= 0 and n_steps >= 0, got dt={dt}, n_steps={n_steps}")
    grid = state0.grid
    field = _generator_sum(generators)
    c = _context(grid, kernel, mp, r_min)
    steps = snapshot_steps(n_steps, stride)
    mass0 = state0.mass()
    snapshots = [state0]
    drift = 0.0
    targets = iter(steps[1:])
    target = next(targets, None)
    for k, rho, theta in _rk4(field, state0.rho.values, state0.theta.values, c, dt, n_steps):
        if k == target:
            snap = _snapshot(grid, rho, theta)
            drift = max(drift, abs(float(np.sum(rho) * grid.dx * grid.dy) - mass0) / mass0)
            snapshots.append(snap)
            target = next(targets, None)
    return HydroTrajectory(times=dt * np.array(steps), snapshots=snapshots, mass_drift=drift)


def flow_map(
    state: HydroState,
    generators: Iterable[Generator],
    kernel: AveragingKernel,
    mp: ModelParams,
    t: float,
    dt: float,
    r_min: float = DEFAULT_R_MIN,
) -> HydroState:
    """F_t of the selected field; t is rounded to a whole number of steps."""
    n_steps = int(round(t / dt)) if t > 0.0 else 0
    if n_steps == 0:
        return state
    return evolve_hydro(state, generators, kernel, mp, dt, n_steps, r_min=r_min).final


def _distance(a: HydroState, b: HydroState) -> float:
    """max |rho - rho'| everywhere, max |theta - theta'| where both densities are on the support."""
    floor = SUPPORT_DENSITY * max(float(np.max(a.rho.values)), float(np.max(b.rho.values)))
    live = (a.rho.values >= floor) & (b.rho.values >= floor)
    gap = float(np.max(np.abs(a.theta.values - b.theta.values)[live])) if live.any() else 0.0
    return max(float(np.max(np.abs(a.rho.values - b.rho.values))), gap)


def _commutator(state0, first, second, kernel, mp, t, s, dt, r_min) -> float:
    one = flow_map(flow_map(state0, second, kernel, mp, s, dt, r_min), first, kernel, mp, t, dt, r_min)
    two = flow_map(flow_map(state0, first, kernel, mp, t, dt, r_min), second, kernel, mp, s, dt, r_min)
    return _distance(one, two)


def check_flow_commutation(
    state0: HydroState,
    kernel: AveragingKernel,
    mp: ModelParams,
    t: float,
    s: float,
    dt: float,
    r_min: float = DEFAULT_R_MIN,
) -> CommutationReport:
    """
    Commutators of the classical and quantum flows, and the HR contrast.

    The X_C/X_Q flows commute in the continuum when V depends on y only;
    numerically the commutator is a discretization-size quantity.
    """
    xc, xq = ("XC",), ("XQ",)
    joint = flow_map(state0, CQ_GENERATORS, kernel, mp, t, dt, r_min)
    split = flow_map(flow_map(state0, xq, kernel, mp, t, dt, r_min), xc, kernel, mp, t, dt, r_min)
    return CommutationReport(
        commutator=_commutator(state0, xc, xq, kernel, mp, t, s, dt, r_min),
        splitting_defect=_distance(joint, split),
        hr_commutator=_commutator(state0, ("XC", "XI"), xq, kernel, mp, t, s, dt, r_min),
    )


# ---------------------------------------------------------------------------
# Position measurement on (rho, theta)
# ---------------------------------------------------------------------------

def smooth_indicator(region: Region, grid: Grid2D, width: float) -> np.ndarray:
    """
    Indicator of a region with tanh edges of the given width; width 0 is sharp.

    Unbounded sides contribute exactly 1, so the full domain gives exactly 1.
    """
    if width <= 0.0:
        return region.mask(grid).astype(float)
    X, Y = grid.mesh()
    out = np.zeros(grid.shape)

    def edge(coord: np.ndarray, lo: float, hi: float) -> np.ndarray:
        left = 1.0 if math.isinf(lo) else 0.5 * (1.0 + np.tanh((coord - lo) / width))
        right = 1.0 if math.isinf(hi) else 0.5 * (1.0 - np.tanh((coord - hi) / width))
        return left * right

    for r in region.rectangles:
        out = np.maximum(out, edge(X, r.x_min, r.x_max) * edge(Y, r.y_min, r.y_max))
    return np.broadcast_to(out, grid.shape).copy()


def measurement_branches(
    state: HydroState, region: Region, edge_width: float
) -> list[tuple[float, HydroState]]:
    """
    Non-selective position measurement: outcome branches with their probabilities.

    The inside branch has rho chi^2, the outside branch rho (1 - chi^2); phases
    are untouched and branches of zero probability are dropped.
    """
    grid = state.grid
    chi2 = smooth_indicator(region, grid, edge_width) ** 2
    branches = []
    for weight in (chi2, 1.0 - chi2):
        rho = state.rho.values * weight
        p = float(np.sum(rho) * grid.dx * grid.dy)
        if p > 0.0:
            branches.append((p, HydroState.from_arrays(grid, rho, state.theta.values)))
    return branches
