"""
First-order epsilon correction.

Writing psi = exp(i theta_A/eps) chi with theta_A the Hamilton-Jacobi phase,
chi obeys

    d chi = L chi + (i eps/2m1) d_xx chi,
    L = -v1 d_x - (d_x v1)/2 + (i/2m2) d_yy - i V.

The zeroth-order slice field Phi = R exp(i(theta_B + nu)) solves d Phi = L Phi
and the first-order field eta = exp(i arg Phi)(mu + i R omega) solves
d eta = L eta + (i/2m1) d_xx Phi. The correction (mu, nu, omega) is read off
(Phi, eta); nu is integrated as its own 1-D equation.

psi = exp(i(theta_A/eps + nu + theta_B + eps omega)) (R + eps mu) + O(eps^2)
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from cqlab.cq_limit import LimitSolution, _x_derivative, _y_derivative
from cqlab.errors import (
    AmplitudeFloorBreached,
    BlowUpDetected,
    CorrectedAmplitudeError,
    StateError,
)
from cqlab.full_qm import ModelParams, snapshot_steps
from cqlab.logging_utils import log_solver_warning
from cqlab.numerics import ComplexField2D, Grid2D, RealField1D, RealField2D, fd_derivative
from cqlab.operators import AveragingKernel, complement
from cqlab.polar import DEFAULT_R_MIN, PolarState, interior_nodes, support_mask, unwrap_rows

CONSTRAINT_TOLERANCE = 1e-10
# theta_B is compared against the zeroth-order solution where R >= this fraction of max R
MISMATCH_SUPPORT = 1e-3


class CorrectionState(BaseModel):
    """
    First-order correction (mu, nu, omega).

    Attributes:
        mu: Amplitude correction
        nu: Classical-phase correction, a function of x only
        omega: Quantum-phase correction with A(omega) = 0
        kernel: Averaging operator of the split
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    mu: RealField2D
    nu: RealField1D
    omega: RealField2D
    kernel: AveragingKernel

    @model_validator(mode="after")
    def _check_constraints(self) -> "CorrectionState":
        grid = self.mu.grid
        if self.omega.grid != grid or self.kernel.grid != grid:
            raise ValueError("mu, omega and kernel must share one grid")
        if self.nu.coords.shape != (grid.nx,):
            raise ValueError("nu must have one sample per x-node")
        drift = float(np.max(np.abs(self.kernel.row_average(self.omega.values))))
        scale = max(1.0, float(np.max(np.abs(self.omega.values))))
        if drift > CONSTRAINT_TOLERANCE * scale:
            raise ValueError(f"A(omega) = {drift:.3e} violates the constraint")
        return self

    @classmethod
    def zero(cls, grid: Grid2D, kernel: AveragingKernel) -> "CorrectionState":
        return cls.from_arrays(grid, kernel, np.zeros(grid.shape), np.zeros(grid.nx), np.zeros(grid.shape))

    @classmethod
    def from_arrays(
        cls, grid: Grid2D, kernel: AveragingKernel, mu: np.ndarray, nu: np.ndarray, omega: np.ndarray
    ) -> "CorrectionState":
        return cls(
            mu=RealField2D(grid=grid, values=mu),
            nu=RealField1D(coords=grid.x, values=nu),
            omega=RealField2D(grid=grid, values=omega),
            kernel=kernel,
        )


class CorrectionTrajectory(BaseModel):
    """
    Output of evolve_correction.

    Attributes:
        times: Snapshot times
        zeroth: Co-evolved zeroth-order polar states
        corrections: Correction at each snapshot
        constraint_drift: max |A(omega)| over the snapshots
        zeroth_mismatch: max difference in (R, theta_B) against the supplied
            zeroth-order solution at shared times (None if no time is shared)
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    times: np.ndarray
    zeroth: list[PolarState]
    corrections: list[CorrectionState]
    constraint_drift: float
    zeroth_mismatch: Optional[float] = None


# ---------------------------------------------------------------------------
# Tendencies
# ---------------------------------------------------------------------------

class _Coefficients(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid2D
    kernel: AveragingKernel
    m1: float
    m2: float
    U_x: np.ndarray
    V: np.ndarray
    r_min: float


def _coefficients(grid: Grid2D, kernel: AveragingKernel, mp: ModelParams, r_min: float) -> _Coefficients:
    X, Y = grid.mesh()
    return _Coefficients(
        grid=grid,
        kernel=kernel,
        m1=mp.m1,
        m2=mp.m2,
        U_x=mp.sample_U(grid.x),
        V=mp.sample_V(X, Y),
        r_min=r_min,
    )


def _velocity(theta_A: np.ndarray, c: _Coefficients) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = fd_derivative(theta_A, c.grid.dx, 0, 1, periodic=False)
    v1 = p / c.m1
    return p, v1, fd_derivative(v1, c.grid.dx, 0, 1, periodic=False)


def _transport(field: np.ndarray, v1: np.ndarray, dv1: np.ndarray, c: _Coefficients) -> np.ndarray:
    """L applied to a complex (nx, ny) field."""
    return (
        -v1[:, None] * _x_derivative(field, c.grid)
        - 0.5 * dv1[:, None] * field
        + (0.5j / c.m2) * _y_derivative(field, c.grid, 2)
        - 1j * c.V * field
    )


def _system_tendency(theta_A, phi, nu, eta, c: _Coefficients):
    p, v1, dv1 = _velocity(theta_A, c)
    d_theta_A = -p ** 2 / (2.0 * c.m1) - c.U_x
    d_phi = _transport(phi, v1, dv1, c)
    d_eta = _transport(eta, v1, dv1, c) + (0.5j / c.m1) * _x_derivative(phi, c.grid, 2)
    quotient = np.real(np.conj(phi) * _y_derivative(phi, c.grid, 2)) / np.maximum(
        np.abs(phi) ** 2, c.r_min ** 2
    )
    d_nu = -v1 * fd_derivative(nu, c.grid.dx, 0, 1, periodic=False) + c.kernel.row_average(
        quotient / (2.0 * c.m2) - c.V
    )
    return d_theta_A, d_phi, d_nu, d_eta


def _phase_factor(phi: np.ndarray) -> np.ndarray:
    amp = np.abs(phi)
    return np.where(amp > 0.0, phi / np.where(amp > 0.0, amp, 1.0), 1.0)


def correction_tendency(
    zeroth: PolarState,
    corr: CorrectionState,
    mp: ModelParams,
    r_min: float = DEFAULT_R_MIN,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Explicit right-hand side (d mu, d nu, d omega) of the first-order system.

        d mu    = -v1 mu_x - (v1_x/2) mu - (1/m2) b_y mu_y - (1/2m2) b_yy mu
                  - (1/m2) R_y omega_y - (1/2m2) R omega_yy
                  - (1/2m1)(2 R_x s_x + R s_xx)
        d nu    = -v1 nu_x + A[(1/2m2)(R_yy/R - b_y^2) - V]
        d omega = B[-v1 omega_x - (1/m2) b_y omega_y + (1/2m2)(mu_yy - R_yy mu/R)/R
                  + (1/2m1)(R_xx/R - s_x^2)]

    with b = theta_B, s = theta_B + nu and v1 = d_x theta_A/m1. Quotients by R
    use max(R, r_min). theta_B, mu and omega are differentiated spectrally, so
    they must be periodic on the grid.
    """
    grid = zeroth.grid
    kernel = zeroth.kernel
    c = _coefficients(grid, kernel, mp, r_min)
    m1, m2 = mp.m1, mp.m2
    R = zeroth.R.values
    b = zeroth.theta_B.values
    s = b + corr.nu.values[:, None]
    mu, nu, omega = corr.mu.values, corr.nu.values, corr.omega.values
    _, v1, dv1 = _velocity(zeroth.theta_A.values, c)
    Rg = np.maximum(R, r_min)

    R_x, R_xx = _x_derivative(R, grid), _x_derivative(R, grid, 2)
    R_y, R_yy = _y_derivative(R, grid, 1), _y_derivative(R, grid, 2)
    # s is not periodic in x once nu varies; differentiate b spectrally and nu by differences
    nu_x = fd_derivative(nu, grid.dx, 0, 1, periodic=False)
    nu_xx = fd_derivative(nu, grid.dx, 0, 2, periodic=False)
    s_x = _x_derivative(b, grid) + nu_x[:, None]
    s_xx = _x_derivative(b, grid, 2) + nu_xx[:, None]
    b_y, b_yy = _y_derivative(b, grid, 1), _y_derivative(b, grid, 2)
    mu_x = _x_derivative(mu, grid)
    mu_y, mu_yy = _y_derivative(mu, grid, 1), _y_derivative(mu, grid, 2)
    om_x = _x_derivative(omega, grid)
    om_y, om_yy = _y_derivative(omega, grid, 1), _y_derivative(omega, grid, 2)

    d_mu = (
        -v1[:, None] * mu_x
        - 0.5 * dv1[:, None] * mu
        - b_y * mu_y / m2
        - b_yy * mu / (2.0 * m2)
        - R_y * om_y / m2
        - R * om_yy / (2.0 * m2)
        - (2.0 * R_x * s_x + R * s_xx) / (2.0 * m1)
    )
    d_nu = -v1 * nu_x + kernel.row_average((R_yy / Rg - b_y ** 2) / (2.0 * m2) - c.V)
    raw = (
        -v1[:, None] * om_x
        - b_y * om_y / m2
        + (mu_yy - R_yy * mu / Rg) / (2.0 * m2 * Rg)
        + (R_xx / Rg - s_x ** 2) / (2.0 * m1)
    )
    return d_mu, d_nu, complement(kernel, raw)


def stepper_tendency(
    zeroth: PolarState,
    corr: CorrectionState,
    mp: ModelParams,
    r_min: float = DEFAULT_R_MIN,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(d mu, d nu, d omega) as the complex-form stepper sees it at one instant."""
    grid = zeroth.grid
    c = _coefficients(grid, zeroth.kernel, mp, r_min)
    R = zeroth.R.values
    e = np.exp(1j * (zeroth.theta_B.values + corr.nu.values[:, None]))
    phi = R * e
    xi = corr.mu.values + 1j * R * corr.omega.values
    eta = xi * e
    _, d_phi, d_nu, d_eta = _system_tendency(zeroth.theta_A.values, phi, corr.nu.values, eta, c)
    z = np.conj(e) * d_phi
    d_R = z.real
    d_theta = z.imag / np.maximum(R, r_min)
    d_xi = np.conj(e) * d_eta - 1j * d_theta * xi
    d_omega = (d_xi.imag - corr.omega.values * d_R) / np.maximum(R, r_min)
    return d_xi.real, d_nu, complement(zeroth.kernel, d_omega)


# ---------------------------------------------------------------------------
# Stepper
# ---------------------------------------------------------------------------

def _read_off(
    grid: Grid2D,
    kernel: AveragingKernel,
    theta_A: np.ndarray,
    phi: np.ndarray,
    nu: np.ndarray,
    eta: np.ndarray,
    r_min: float,
) -> tuple[PolarState, CorrectionState]:
    R = np.abs(phi)
    zeroth = PolarState.from_arrays(
        grid, kernel, R=R, theta_A=theta_A, theta_B=complement(kernel, unwrap_rows(phi, grid, r_min))
    )
    xi = eta * np.conj(_phase_factor(phi))
    omega = complement(kernel, xi.imag / np.maximum(R, r_min))
    return zeroth, CorrectionState.from_arrays(grid, kernel, mu=xi.real, nu=nu, omega=omega)


def evolve_correction(
    zeroth: LimitSolution,
    corr0: CorrectionState,
    mp: ModelParams,
    kernel: AveragingKernel,
    dt: float,
    n_steps: Optional[int] = None,
    stride: Optional[int] = None,
    r_min: float = DEFAULT_R_MIN,
) -> CorrectionTrajectory:
    """
    RK4 on the first-order system, co-evolving the zeroth-order fields.

    The zeroth-order coefficients are regenerated on the stepper's own time
    grid from zeroth.snapshots[0] in Eulerian form (theta_A by its
    Hamilton-Jacobi tendency, phi by the projected y-evolution), not by the
    characteristics. The result records how far they drift from the supplied
    solution at shared snapshot times as zeroth_mismatch.

    Args:
        zeroth: Zeroth-order solution (its first snapshot is the initial state)
        corr0: Initial correction
        mp: Model parameters
        kernel: Averaging operator (must match the zeroth-order split)
        dt: Step size
        n_steps: Number of steps (defaults to the zeroth solution's horizon)
        stride: Steps between snapshots

    Raises:
        AmplitudeFloorBreached: zeroth-order R below r_min inside the support
        BlowUpDetected: non-finite values
    """
    if not dt > 0.0:
        raise StateError(f"dt must be positive, got {dt}")
    state0 = zeroth.snapshots[0]
    grid = state0.grid
    if kernel.grid != grid:
        raise StateError("kernel and zeroth-order solution live on different grids")
    if n_steps is None:
        n_steps = int(round(float(zeroth.times[-1]) / dt))
    c = _coefficients(grid, kernel, mp, r_min)

    theta_A = np.array(state0.theta_A.values)
    nu = np.array(corr0.nu.values)
    e0 = np.exp(1j * (state0.theta_B.values + nu[:, None]))
    phi = state0.R.values * e0
    eta = (corr0.mu.values + 1j * state0.R.values * corr0.omega.values) * e0

    steps = snapshot_steps(n_steps, stride)
    times = dt * np.array(steps)
    z0, c0 = _read_off(grid, kernel, theta_A, phi, nu, eta, r_min)
    zeroth_states, corrections = [z0], [c0]
    targets = iter(steps[1:])
    target = next(targets, None)
    fields = (theta_A, phi, nu, eta)
    for k in range(1, n_steps + 1):
        k1 = _system_tendency(*fields, c)
        k2 = _system_tendency(*(f + 0.5 * dt * d for f, d in zip(fields, k1)), c)
        k3 = _system_tendency(*(f + 0.5 * dt * d for f, d in zip(fields, k2)), c)
        k4 = _system_tendency(*(f + dt * d for f, d in zip(fields, k3)), c)
        fields = tuple(
            f + dt / 6.0 * (a + 2.0 * b + 2.0 * cc + d)
            for f, a, b, cc, d in zip(fields, k1, k2, k3, k4)
        )
        if not all(np.all(np.isfinite(f)) for f in fields):
            raise BlowUpDetected(f"first-order system diverged at t={k * dt:.6g}")
        if interior_nodes(np.abs(fields[1]), r_min).any():
            raise AmplitudeFloorBreached(
                f"zeroth-order R fell below r_min={r_min:g} inside the support at t={k * dt:.6g}"
            )
        if k == target:
            z, corr = _read_off(grid, kernel, *fields, r_min)
            zeroth_states.append(z)
            corrections.append(corr)
            target = next(targets, None)

    drift = max(float(np.max(np.abs(kernel.row_average(cs.omega.values)))) for cs in corrections)
    if drift > 1e-9:
        log_solver_warning("evolve_correction", "constraint_drift", drift=drift)
    return CorrectionTrajectory(
        times=times,
        zeroth=zeroth_states,
        corrections=corrections,
        constraint_drift=drift,
        zeroth_mismatch=_mismatch(zeroth, times, zeroth_states),
    )


def _mismatch(reference: LimitSolution, times: np.ndarray, states: list[PolarState]) -> Optional[float]:
    worst: Optional[float] = None
    for t_ref, ref in zip(reference.times, reference.snapshots):
        hits = np.flatnonzero(np.isclose(times, t_ref, rtol=0.0, atol=1e-9))
        if hits.size == 0:
            continue
        mine = states[int(hits[0])]
        live = support_mask(ref.R.values, MISMATCH_SUPPORT)
        gap = mine.theta_B.values - complement(mine.kernel, ref.theta_B.values)
        err = max(
            float(np.max(np.abs(mine.R.values - ref.R.values))),
            float(np.max(np.abs(gap[live]))),
        )
        worst = err if worst is None else max(worst, err)
    return worst


def corrected_reconstruct(
    zeroth: PolarState,
    corr: CorrectionState,
    epsilon: float,
    r_min: float = DEFAULT_R_MIN,
) -> ComplexField2D:
    """
    psi = exp(i(theta_A/eps + nu + theta_B + eps omega)) (R + eps mu).

    Raises:
        StateError: epsilon <= 0
        CorrectedAmplitudeError: R + eps mu < r_min/2 where R >= r_min
    """
    if not epsilon > 0.0:
        raise StateError(f"epsilon must be positive, got {epsilon}")
    R = zeroth.R.values
    amp = R + epsilon * corr.mu.values
    bad = (R >= r_min) & (amp < 0.5 * r_min)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        grid = zeroth.grid
        raise CorrectedAmplitudeError(
            f"corrected amplitude {amp[i, j]:.3e} is nonpositive at x={grid.x[i]:.6g}, y={grid.y[j]:.6g}"
        )
    phase = (
        zeroth.theta_A.values[:, None] / epsilon
        + corr.nu.values[:, None]
        + zeroth.theta_B.values
        + epsilon * corr.omega.values
    )
    return ComplexField2D(grid=zeroth.grid, values=np.maximum(amp, 0.0) * np.exp(1j * phase))
