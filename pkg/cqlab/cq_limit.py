"""
Classical-quantum limit solvers.

Production route (Lagrangian): the classical phase theta_A follows the
Hamilton-Jacobi equation, solved by characteristics of H1 = p^2/2m1 + U.
Along each characteristic x -> F(t, x) the quantum slice obeys a one-particle
Schrodinger equation in y with potential V(F(t, x), y). The Eulerian fields
are recovered through the inverse map G(t, .) and the Jacobian dF.

Oracle route (Eulerian): RK4 on the local system (R, theta_A, theta~_B) with
spectral derivatives.

Both routes are valid only before the first caustic (dF -> 0).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import fft as sp_fft
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from cqlab.errors import (
    AmplitudeFloorBreached,
    BlowUpDetected,
    CausticFormed,
    FlowEscape,
    StateError,
)
from cqlab.full_qm import ModelParams, snapshot_steps
from cqlab.logging_utils import log_solver_warning
from cqlab.numerics import (
    Grid2D,
    PotentialFn,
    RealField1D,
    complex_step_derivative,
    fd_derivative,
    fourier_interpolate,
    gradient_1d,
    sample_potential,
    spectral_derivative,
)
from cqlab.operators import AveragingKernel, complement
from cqlab.polar import DEFAULT_R_MIN, PolarState, interior_nodes, unwrap_rows

DEFAULT_CAUSTIC_TOL = 1e-3
SLICE_NORM_TOLERANCE = 1e-10


class ClassicalFlow(BaseModel):
    """
    Sampled Hamiltonian flow, one trajectory per launch node.

    Attributes:
        t_grid: Stored times, shape (nt,)
        labels: Launch positions (Lagrangian labels), shape (n,)
        X, P: Positions and momenta, shape (nt, n); F(t, x) = X
        dF: Jacobian dF/dx across launch nodes, shape (nt, n)
        m1: Classical mass
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    t_grid: np.ndarray
    labels: np.ndarray
    X: np.ndarray
    P: np.ndarray
    dF: np.ndarray
    m1: float

    @property
    def F(self) -> np.ndarray:
        return self.X


class QuantumFamily(BaseModel):
    """
    Per-label 1-D Schrodinger trajectories.

    Attributes:
        times: Snapshot times
        steps: Step indices of the snapshots in the flow's time grid
        snapshots: Slices psi~(t, label, y), shape (n, ny) each
        norm_drift: max over slices of |norm - 1| at the final time
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    times: np.ndarray
    steps: list[int]
    snapshots: list[np.ndarray]
    norm_drift: float


class LimitSolution(BaseModel):
    """
    Limit solution on the Eulerian grid.

    Attributes:
        times: Snapshot times
        snapshots: Polar state at each snapshot
        flow: Classical flow (None for the Eulerian oracle)
        caustic_time: First caustic time within the flow's horizon, if any
        dt: Step size used
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    times: np.ndarray
    snapshots: list[PolarState]
    flow: Optional[ClassicalFlow] = None
    caustic_time: Optional[float] = None
    dt: float

    @property
    def final(self) -> PolarState:
        return self.snapshots[-1]

    @property
    def grid(self) -> Grid2D:
        return self.snapshots[0].grid


class ClosedClassical(BaseModel):
    """Marginal density and classical phase of the closed classical system."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    times: np.ndarray
    rho1: np.ndarray
    theta_A: np.ndarray


# ---------------------------------------------------------------------------
# Hamiltonian flow
# ---------------------------------------------------------------------------

def _force(U: PotentialFn, X: np.ndarray) -> np.ndarray:
    return -complex_step_derivative(U, X, np.zeros_like(X), "x")


def _check_times(t_grid: np.ndarray) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 1 or np.any(np.diff(t) <= 0.0):
        raise StateError("t_grid must be a strictly increasing 1-D array")
    return t


def hamiltonian_flow(
    U: PotentialFn,
    theta_A0: RealField1D,
    m1: float,
    t_grid: np.ndarray,
    box: Optional[tuple[float, float]] = None,
) -> ClassicalFlow:
    """
    Velocity-Verlet characteristics of H1 = p^2/(2 m1) + U(x).

    Trajectories start at every node of theta_A0 with momentum
    d(theta_A0)/dx. dF is taken by second-order differences across launch
    nodes.

    Raises:
        FlowEscape: a trajectory leaves the box by more than half its width
        BlowUpDetected: non-finite positions or momenta
    """
    t = _check_times(t_grid)
    labels = np.asarray(theta_A0.coords, dtype=float)
    h_label = float(labels[1] - labels[0])
    if box is None:
        box = (float(labels[0]), float(labels[-1]) + h_label)
    lo, hi = box
    margin = 0.5 * (hi - lo)

    nt, n = t.size, labels.size
    X = np.empty((nt, n))
    P = np.empty((nt, n))
    X[0] = labels
    P[0] = gradient_1d(theta_A0.values, h_label)
    f = _force(U, X[0])
    for k in range(nt - 1):
        h = t[k + 1] - t[k]
        p_half = P[k] + 0.5 * h * f
        X[k + 1] = X[k] + h * p_half / m1
        f = _force(U, X[k + 1])
        P[k + 1] = p_half + 0.5 * h * f
        if not (np.all(np.isfinite(X[k + 1])) and np.all(np.isfinite(P[k + 1]))):
            raise BlowUpDetected(f"classical flow diverged at t={t[k + 1]:.6g}")
        if np.any(X[k + 1] < lo - margin) or np.any(X[k + 1] > hi + margin):
            raise FlowEscape(f"trajectory left the box [{lo}, {hi}] by more than half its width at t={t[k + 1]:.6g}")

    dF = np.gradient(X, labels, axis=1, edge_order=2)
    dF[0] = 1.0
    return ClassicalFlow(t_grid=t, labels=labels, X=X, P=P, dF=dF, m1=m1)


def check_caustic(flow: ClassicalFlow, tol: float = DEFAULT_CAUSTIC_TOL) -> Optional[float]:
    """Earliest t with min_x dF(t, x) <= tol, linearly interpolated; None if dF stays above tol."""
    mins = flow.dF.min(axis=1)
    hits = np.flatnonzero(mins <= tol)
    if hits.size == 0:
        return None
    k = int(hits[0])
    if k == 0:
        return float(flow.t_grid[0])
    t0, t1 = flow.t_grid[k - 1], flow.t_grid[k]
    m0, m1 = mins[k - 1], mins[k]
    return float(t0 + (m0 - tol) / (m0 - m1) * (t1 - t0))


def _require_caustic_free(flow: ClassicalFlow, t_end: float, tol: float) -> None:
    caustic = check_caustic(flow, tol)
    if caustic is not None and caustic <= t_end:
        raise CausticFormed(
            f"caustic at t={caustic:.6g} before requested time {t_end:.6g}", caustic_time=caustic
        )


def _lagrangian_action(flow: ClassicalFlow, U: PotentialFn) -> np.ndarray:
    """
    S(t, label) = int_0^t (P^2/2m1 - U(X)) dtau by the end-corrected trapezoid rule.

    The correction uses dL/dtau = -2 P U'(X)/m1, giving fourth-order accuracy.
    """
    X, P, m1 = flow.X, flow.P, flow.m1
    L = P ** 2 / (2.0 * m1) - sample_potential(U, X, np.zeros_like(X))
    dL = 2.0 * P * _force(U, X) / m1
    h = np.diff(flow.t_grid)[:, None]
    increments = 0.5 * h * (L[1:] + L[:-1]) - h ** 2 / 12.0 * (dL[1:] - dL[:-1])
    S = np.zeros_like(L)
    S[1:] = np.cumsum(increments, axis=0)
    return S


def theta_A_evolve(
    flow: ClassicalFlow,
    U: PotentialFn,
    theta_A0: RealField1D,
    m1: float,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
    steps: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    theta_A(t, x) = theta_A0(G(t, x)) + S(t, G(t, x)).

    Evaluated at the Eulerian nodes (the flow labels) by cubic Hermite
    interpolation through (F, theta_A0 + S) with slopes P.

    Returns:
        Array of shape (len(steps), n); all stored times when steps is None

    Raises:
        CausticFormed: caustic at or before the last requested time
    """
    if flow.m1 != m1:
        raise StateError(f"flow was integrated with m1={flow.m1}, not {m1}")
    if steps is None:
        steps = range(flow.t_grid.size)
    steps = list(steps)
    _require_caustic_free(flow, float(flow.t_grid[max(steps)]), caustic_tol)
    S = _lagrangian_action(flow, U)
    out = np.empty((len(steps), flow.labels.size))
    for row, k in enumerate(steps):
        if k == 0:
            out[row] = theta_A0.values
            continue
        try:
            spline = CubicHermiteSpline(flow.X[k], theta_A0.values + S[k], flow.P[k], extrapolate=True)
        except ValueError as exc:
            raise CausticFormed(f"flow not monotone at t={flow.t_grid[k]:.6g}") from exc
        out[row] = spline(flow.labels)
    return out


def invert_flow(
    flow: ClassicalFlow,
    t: float,
    query: Optional[np.ndarray] = None,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
) -> RealField1D:
    """
    G(t, .), the inverse of F(t, .), by monotone interpolation.

    Between stored times F and dF are interpolated linearly in t.

    Raises:
        CausticFormed: dF(t, .) <= caustic_tol
        StateError: t outside the flow's time range
    """
    tg = flow.t_grid
    if t < tg[0] - 1e-12 or t > tg[-1] + 1e-12:
        raise StateError(f"t={t} outside the flow range [{tg[0]}, {tg[-1]}]")
    if tg.size == 1:
        F, dF = flow.X[0], flow.dF[0]
    else:
        k = int(np.clip(np.searchsorted(tg, t, side="right") - 1, 0, tg.size - 2))
        a = (t - tg[k]) / (tg[k + 1] - tg[k])
        F = (1.0 - a) * flow.X[k] + a * flow.X[k + 1]
        dF = (1.0 - a) * flow.dF[k] + a * flow.dF[k + 1]
    if float(np.min(dF)) <= caustic_tol or np.any(np.diff(F) <= 0.0):
        raise CausticFormed(f"flow is not invertible at t={t:.6g}", caustic_time=check_caustic(flow, caustic_tol))
    if query is None:
        query = flow.labels
    G = PchipInterpolator(F, flow.labels, extrapolate=True)(query)
    return RealField1D(coords=query, values=G)


def classical_velocity(theta_A: RealField1D, m1: float) -> RealField1D:
    """v1 = d(theta_A)/dx / m1."""
    h = float(theta_A.coords[1] - theta_A.coords[0])
    return RealField1D(coords=theta_A.coords, values=gradient_1d(theta_A.values, h) / m1)


def hamilton_jacobi_residual(
    times: np.ndarray, x: np.ndarray, theta_A: np.ndarray, U: PotentialFn, m1: float
) -> float:
    """max |d(theta_A)/dt + (d(theta_A)/dx)^2/(2 m1) + U| by second-order differences."""
    theta_t = np.gradient(theta_A, times, axis=0, edge_order=2)
    theta_x = np.gradient(theta_A, x, axis=1, edge_order=2)
    U_x = sample_potential(U, x, np.zeros_like(x))
    residual = theta_t + theta_x ** 2 / (2.0 * m1) + U_x[None, :]
    return float(np.max(np.abs(residual)))


# ---------------------------------------------------------------------------
# Quantum family and assembly
# ---------------------------------------------------------------------------

def slice_data(state0: PolarState) -> tuple[np.ndarray, np.ndarray]:
    """
    Split R0 exp(i theta_B0) into normalized y-slices and per-slice weights.

    Returns:
        (psi_tilde0, weights) with psi_tilde0[i] of unit y-norm and
        weights[i]^2 = rho1(x_i); empty slices are zero with zero weight
    """
    grid = state0.grid
    phi = state0.R.values * np.exp(1j * state0.theta_B.values)
    weights = np.sqrt(np.sum(np.abs(phi) ** 2, axis=1) * grid.dy)
    safe = np.where(weights > 0.0, weights, 1.0)
    psi_tilde = np.where(weights[:, None] > 0.0, phi / safe[:, None], 0.0)
    return psi_tilde, weights


def evolve_quantum_family(
    psi_tilde0: np.ndarray,
    V: PotentialFn,
    flow: ClassicalFlow,
    m2: float,
    dt: float,
    grid: Grid2D,
    stride: Optional[int] = None,
) -> QuantumFamily:
    """
    One Strang split-step solve in y per Lagrangian label.

    The potential of slice x at step n is V(F(t_n, x), y); each step uses
    half phases at t_n and t_n+1 around the kinetic phase.

    Raises:
        StateError: a nonzero slice is not normalized, or dt does not match the flow
        BlowUpDetected: non-finite values
    """
    psi = np.array(psi_tilde0, dtype=complex)
    norms = np.sum(np.abs(psi) ** 2, axis=1) * grid.dy
    live = norms > 0.0
    if np.any(np.abs(norms[live] - 1.0) > SLICE_NORM_TOLERANCE):
        raise StateError("every nonzero slice must have unit y-norm")
    tg = flow.t_grid
    n_steps = tg.size - 1
    if n_steps > 0 and not np.allclose(np.diff(tg), dt, rtol=1e-9, atol=0.0):
        raise StateError(f"flow time grid does not match dt={dt}")

    y = grid.y[None, :]
    kinetic = np.exp(-1j * dt * grid.wavenumbers("y") ** 2 / (2.0 * m2))[None, :]

    def half_phase(k: int) -> np.ndarray:
        return np.exp(-0.5j * dt * sample_potential(V, flow.X[k][:, None], y))

    steps = snapshot_steps(n_steps, stride)
    snapshots = [psi.copy()]
    targets = iter(steps[1:])
    target = next(targets, None)
    half_now = half_phase(0)
    for k in range(n_steps):
        half_next = half_phase(k + 1)
        psi = half_next * sp_fft.ifft(kinetic * sp_fft.fft(half_now * psi, axis=1), axis=1)
        half_now = half_next
        if k + 1 == target:
            if not np.all(np.isfinite(psi)):
                raise BlowUpDetected(f"quantum slice diverged at t={tg[k + 1]:.6g}")
            snapshots.append(psi.copy())
            target = next(targets, None)
    final_norms = np.sum(np.abs(psi) ** 2, axis=1) * grid.dy
    drift = float(np.max(np.abs(final_norms[live] - 1.0))) if live.any() else 0.0
    return QuantumFamily(
        times=tg[steps],
        steps=steps,
        snapshots=snapshots,
        norm_drift=drift,
    )


def assemble_limit_solution(
    flow: ClassicalFlow,
    theta_A: np.ndarray,
    family: QuantumFamily,
    weights: np.ndarray,
    kernel: AveragingKernel,
    r_min: float = DEFAULT_R_MIN,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
) -> LimitSolution:
    """
    Map the Lagrangian solution back to Eulerian polar snapshots.

    R(t, x, y) = |w psi~(t, G, y)| / sqrt(dF(t, G)), theta_B = B(arg psi~(t, G, y))
    with the slices interpolated trigonometrically at G and the phases
    unwrapped slice-wise.

    Args:
        flow: Classical flow on the stepper's time grid
        theta_A: Classical phase at the family's snapshot steps, shape (n_snap, nx)
        family: Quantum family
        weights: Slice weights sqrt(rho1_0)
        kernel: Averaging operator for the output split

    Raises:
        CausticFormed: dF at or below caustic_tol at a snapshot
        NodeDetected: a slice has an enclosed node
    """
    grid = kernel.grid
    labels = flow.labels
    snapshots: list[PolarState] = []
    for row, k in enumerate(family.steps):
        F, dF = flow.X[k], flow.dF[k]
        if float(np.min(dF)) <= caustic_tol or np.any(np.diff(F) <= 0.0):
            raise CausticFormed(
                f"flow not invertible at t={flow.t_grid[k]:.6g}",
                caustic_time=check_caustic(flow, caustic_tol),
            )
        G = PchipInterpolator(F, labels, extrapolate=True)(grid.x)
        dF_at_G = PchipInterpolator(labels, dF, extrapolate=True)(G)
        lagrangian = weights[:, None] * family.snapshots[row]
        eulerian = fourier_interpolate(lagrangian, grid.x_min, grid.lx, G) / np.sqrt(dF_at_G)[:, None]
        theta_tilde = unwrap_rows(eulerian, grid, r_min)
        snapshots.append(
            PolarState.from_arrays(
                grid,
                kernel,
                R=np.abs(eulerian),
                theta_A=theta_A[row],
                theta_B=complement(kernel, theta_tilde),
            )
        )
    return LimitSolution(
        times=family.times,
        snapshots=snapshots,
        flow=flow,
        caustic_time=check_caustic(flow, caustic_tol),
        dt=float(flow.t_grid[1] - flow.t_grid[0]) if flow.t_grid.size > 1 else 0.0,
    )


def evolve_limit(
    state0: PolarState,
    mp: ModelParams,
    dt: float,
    n_steps: int,
    stride: Optional[int] = None,
    r_min: float = DEFAULT_R_MIN,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
) -> LimitSolution:
    """
    Lagrangian limit pipeline: flow, caustic check, theta_A, quantum family, assembly.

    Raises:
        StateError: dt <= 0
        CausticFormed: caustic before t = n_steps*dt
    """
    if not dt > 0.0:
        raise StateError(f"dt must be positive, got {dt}")
    grid = state0.grid
    t_grid = dt * np.arange(n_steps + 1)
    flow = hamiltonian_flow(mp.U, state0.theta_A, mp.m1, t_grid, box=(grid.x_min, grid.x_max))
    _require_caustic_free(flow, float(t_grid[-1]), caustic_tol)
    steps = snapshot_steps(n_steps, stride)
    theta_A = theta_A_evolve(flow, mp.U, state0.theta_A, mp.m1, caustic_tol, steps)
    psi_tilde0, weights = slice_data(state0)
    family = evolve_quantum_family(psi_tilde0, mp.V, flow, mp.m2, dt, grid, stride)
    if family.norm_drift > 1e-10:
        log_solver_warning("evolve_quantum_family", "slice_norm_drift", drift=family.norm_drift)
    return assemble_limit_solution(flow, theta_A, family, weights, state0.kernel, r_min, caustic_tol)


# ---------------------------------------------------------------------------
# Eulerian oracle
# ---------------------------------------------------------------------------

def _x_derivative(values: np.ndarray, grid: Grid2D, order: int = 1) -> np.ndarray:
    if grid.periodic_x:
        return spectral_derivative(values, grid.wavenumbers("x"), 0, order)
    return fd_derivative(values, grid.dx, 0, order, periodic=False)


def _y_derivative(values: np.ndarray, grid: Grid2D, order: int) -> np.ndarray:
    if grid.periodic_y:
        return spectral_derivative(values, grid.wavenumbers("y"), 1, order)
    return fd_derivative(values, grid.dy, 1, order, periodic=False)


def _snapshot_from_phi(
    grid: Grid2D, kernel: AveragingKernel, theta_A: np.ndarray, R: np.ndarray, theta_tilde: np.ndarray
) -> PolarState:
    # a negative R is the same point with theta shifted by pi
    flip = np.where(R < 0.0, np.pi, 0.0)
    return PolarState.from_arrays(
        grid,
        kernel,
        R=np.abs(R),
        theta_A=theta_A,
        theta_B=complement(kernel, theta_tilde + flip),
    )


def evolve_limit_direct(
    state0: PolarState,
    mp: ModelParams,
    dt: float,
    n_steps: int,
    stride: Optional[int] = None,
    r_min: float = DEFAULT_R_MIN,
    project: bool = False,
) -> LimitSolution:
    """
    Classic RK4 on the local system in Eulerian form.

        d theta_A = -(d_x theta_A)^2/(2 m1) - U
        d phi     = -v1 d_x phi - (d_x v1) phi/2 + (i/2m2) d_yy phi - i V phi,  phi = R e^{i theta~}

    with v1 = d_x theta_A/m1. Tendencies of (R, theta~) are read off phi, the
    phase tendency divided by max(R, r_min).

    With project the phase tendency is passed through B of state0's kernel
    at every stage, so theta~ stays in the range of B and the run depends on
    the kernel. R and theta_B are unchanged by this up to discretization:
    it only drops the x-only part of theta~.

    Raises:
        AmplitudeFloorBreached: R fell below r_min inside the support
        BlowUpDetected: non-finite values
    """
    if not dt > 0.0:
        raise StateError(f"dt must be positive, got {dt}")
    grid = state0.grid
    kernel = state0.kernel
    m1, m2 = mp.m1, mp.m2
    X, Y = grid.mesh()
    U_x = mp.sample_U(grid.x)
    V = mp.sample_V(X, Y)

    def tendency(theta_A: np.ndarray, R: np.ndarray, theta_tilde: np.ndarray):
        e = np.exp(1j * theta_tilde)
        phi = R * e
        p = fd_derivative(theta_A, grid.dx, 0, 1, periodic=False)
        v1 = p / m1
        dv1 = fd_derivative(v1, grid.dx, 0, 1, periodic=False)
        dphi = (
            -v1[:, None] * _x_derivative(phi, grid)
            - 0.5 * dv1[:, None] * phi
            + (0.5j / m2) * _y_derivative(phi, grid, 2)
            - 1j * V * phi
        )
        z = np.conj(e) * dphi
        dtheta = z.imag / np.maximum(np.abs(R), r_min)
        if project:
            dtheta = complement(kernel, dtheta)
        return -p ** 2 / (2.0 * m1) - U_x, z.real, dtheta

    theta_A = np.array(state0.theta_A.values)
    R = np.array(state0.R.values)
    theta_tilde = np.array(state0.theta_B.values)
    steps = snapshot_steps(n_steps, stride)
    snapshots = [state0]
    targets = iter(steps[1:])
    target = next(targets, None)
    for k in range(1, n_steps + 1):
        k1 = tendency(theta_A, R, theta_tilde)
        k2 = tendency(*(s + 0.5 * dt * d for s, d in zip((theta_A, R, theta_tilde), k1)))
        k3 = tendency(*(s + 0.5 * dt * d for s, d in zip((theta_A, R, theta_tilde), k2)))
        k4 = tendency(*(s + dt * d for s, d in zip((theta_A, R, theta_tilde), k3)))
        theta_A, R, theta_tilde = (
            s + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip((theta_A, R, theta_tilde), k1, k2, k3, k4)
        )
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(theta_tilde)) and np.all(np.isfinite(theta_A))):
            raise BlowUpDetected(f"direct limit solver diverged at t={k * dt:.6g}")
        if interior_nodes(np.abs(R), r_min).any():
            raise AmplitudeFloorBreached(f"R fell below r_min={r_min:g} inside the support at t={k * dt:.6g}")
        if k == target:
            snapshots.append(_snapshot_from_phi(grid, kernel, theta_A, R, theta_tilde))
            target = next(targets, None)
    return LimitSolution(times=dt * np.array(steps), snapshots=snapshots, dt=dt)


# ---------------------------------------------------------------------------
# Closed classical subsystem
# ---------------------------------------------------------------------------

def closed_classical_system(
    grid: Grid2D,
    theta_A0: RealField1D,
    rho1_0: RealField1D,
    U: PotentialFn,
    m1: float,
    t_grid: np.ndarray,
    steps: Optional[Sequence[int]] = None,
    caustic_tol: float = DEFAULT_CAUSTIC_TOL,
) -> ClosedClassical:
    """
    Continuity for rho1 and Hamilton-Jacobi for theta_A, classic RK4 on the x nodes.

        d theta_A = -(d_x theta_A)^2/(2 m1) - U
        d rho1    = -d_x(rho1 v1),  v1 = d_x theta_A/m1

    Nothing in this system depends on the quantum coordinate. It shares no
    code path with the characteristics of evolve_limit; the flow is only
    traced to refuse a caustic inside the horizon.

    Raises:
        StateError: t_grid not uniformly spaced from its first entry
        CausticFormed: caustic before t_grid[-1]
        BlowUpDetected: non-finite values
    """
    t = _check_times(t_grid)
    dt = float(t[1] - t[0]) if t.size > 1 else 0.0
    if t.size > 1 and not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0.0):
        raise StateError("closed_classical_system needs a uniform t_grid")
    flow = hamiltonian_flow(U, theta_A0, m1, t, box=(grid.x_min, grid.x_max))
    _require_caustic_free(flow, float(t[-1]), caustic_tol)
    steps = list(range(t.size)) if steps is None else [int(k) for k in steps]
    x = grid.x
    U_x = sample_potential(U, x, np.zeros_like(x))

    def tendency(theta_A: np.ndarray, rho1: np.ndarray):
        v1 = classical_velocity(RealField1D(coords=x, values=theta_A), m1).values
        return -0.5 * m1 * v1 ** 2 - U_x, -_x_derivative(rho1 * v1, grid)

    theta_A = np.array(theta_A0.values)
    rho1 = np.array(rho1_0.values)
    rows = {0: (theta_A, rho1)}
    for k in range(1, max(steps) + 1):
        k1 = tendency(theta_A, rho1)
        k2 = tendency(theta_A + 0.5 * dt * k1[0], rho1 + 0.5 * dt * k1[1])
        k3 = tendency(theta_A + 0.5 * dt * k2[0], rho1 + 0.5 * dt * k2[1])
        k4 = tendency(theta_A + dt * k3[0], rho1 + dt * k3[1])
        theta_A = theta_A + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        rho1 = rho1 + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if not (np.all(np.isfinite(theta_A)) and np.all(np.isfinite(rho1))):
            raise BlowUpDetected(f"closed classical system diverged at t={t[k]:.6g}")
        if k in steps:
            rows[k] = (theta_A, rho1)
    return ClosedClassical(
        times=t[steps],
        rho1=np.array([rows[k][1] for k in steps]),
        theta_A=np.array([rows[k][0] for k in steps]),
    )
