"""
Exact epsilon-dependent two-particle Schrodinger solver.

    i dpsi/dt = -(eps/2m1) psi_xx + (1/eps) U psi - (1/2m2) psi_yy + V psi

Strang split-step Fourier: half potential phase, full kinetic phase in
Fourier space, half potential phase.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import fft as sp_fft

from cqlab.errors import BlowUpDetected, StateError
from cqlab.logging_utils import log_solver_warning
from cqlab.numerics import ComplexField2D, Grid2D, PotentialFn, sample_potential

NORM_TOLERANCE = 1e-10


class DimensionalParams(BaseModel):
    """
    Physical parameters before scaling.

    Attributes:
        M1, M2: Masses (M2 <= M1)
        L1, L2: Length scales
        T_scale: Time scale
        hbar: Action scale
        U_dim, V_dim: Dimensional potentials U(X) and V(X, Y)
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    M1: float = Field(..., gt=0)
    M2: float = Field(..., gt=0)
    L1: float = Field(..., gt=0)
    L2: float = Field(..., gt=0)
    T_scale: float = Field(..., gt=0)
    hbar: float = Field(..., gt=0)
    U_dim: PotentialFn
    V_dim: PotentialFn

    @model_validator(mode="after")
    def _check_masses(self) -> "DimensionalParams":
        if self.M2 > self.M1:
            raise ValueError("M2 must not exceed M1")
        return self


class ModelParams(BaseModel):
    """
    Dimensionless model.

    Attributes:
        m1, m2: Dimensionless masses
        epsilon: Mass ratio M2/M1 in (0, 1]
        U: Potential of x, called as U(x, y) with y ignored
        V: Coupling potential V(x, y)
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    m1: float = Field(..., gt=0)
    m2: float = Field(..., gt=0)
    epsilon: float = Field(..., gt=0, le=1)
    U: PotentialFn
    V: PotentialFn

    def with_epsilon(self, epsilon: float) -> "ModelParams":
        return ModelParams(m1=self.m1, m2=self.m2, epsilon=epsilon, U=self.U, V=self.V)

    def sample_U(self, x: np.ndarray) -> np.ndarray:
        return sample_potential(self.U, x, np.zeros_like(np.asarray(x, dtype=float)))

    def sample_V(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return sample_potential(self.V, x, y)


def nondimensionalize(dp: DimensionalParams) -> ModelParams:
    """
    Scale to dimensionless variables.

    eps = M2/M1, m1 = M2 L1^2/(hbar T), m2 = M2 L2^2/(hbar T),
    U~(x) = T M2/(hbar M1) U(L1 x), V~(x, y) = T/hbar V(L1 x, L2 y).
    """
    u_scale = dp.T_scale * dp.M2 / (dp.hbar * dp.M1)
    v_scale = dp.T_scale / dp.hbar
    U_dim, V_dim, L1, L2 = dp.U_dim, dp.V_dim, dp.L1, dp.L2

    def U(x, y):
        return u_scale * U_dim(L1 * x, y)

    def V(x, y):
        return v_scale * V_dim(L1 * x, L2 * y)

    return ModelParams(
        m1=dp.M2 * dp.L1 ** 2 / (dp.hbar * dp.T_scale),
        m2=dp.M2 * dp.L2 ** 2 / (dp.hbar * dp.T_scale),
        epsilon=dp.M2 / dp.M1,
        U=U,
        V=V,
    )


class FullTrajectory(BaseModel):
    """
    Snapshots of the full solver.

    Attributes:
        times: Snapshot times
        snapshots: psi at each snapshot time
        norm_drift: max |norm - 1| over the snapshots
        dt: Step size used
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    times: np.ndarray
    snapshots: list[ComplexField2D]
    norm_drift: float
    dt: float

    @property
    def final(self) -> ComplexField2D:
        return self.snapshots[-1]


def norm(psi: np.ndarray, grid: Grid2D) -> float:
    return float(np.sum(np.abs(psi) ** 2) * grid.dx * grid.dy)


def total_potential(grid: Grid2D, mp: ModelParams) -> np.ndarray:
    """U/eps + V on the grid."""
    X, Y = grid.mesh()
    U = mp.sample_U(grid.x)[:, None]
    V = mp.sample_V(X, Y)
    return U / mp.epsilon + V


def kinetic_symbol(grid: Grid2D, mp: ModelParams) -> np.ndarray:
    """eps kx^2/(2 m1) + ky^2/(2 m2) on the Fourier grid."""
    kx = grid.wavenumbers("x")[:, None]
    ky = grid.wavenumbers("y")[None, :]
    return mp.epsilon * kx ** 2 / (2.0 * mp.m1) + ky ** 2 / (2.0 * mp.m2)


def snapshot_steps(n_steps: int, stride: Optional[int]) -> list[int]:
    """Step indices at which snapshots are stored; always includes 0 and n_steps."""
    if stride is None or stride <= 0:
        stride = max(n_steps, 1)
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def evolve_full(
    psi0: ComplexField2D,
    mp: ModelParams,
    dt: float,
    n_steps: int,
    stride: Optional[int] = None,
) -> FullTrajectory:
    """
    Strang split-step evolution.

    Args:
        psi0: Normalized initial wave function
        mp: Model parameters
        dt: Step size (dt = 0 returns psi0 unchanged)
        n_steps: Number of steps
        stride: Steps between stored snapshots (None stores first and last)

    Raises:
        StateError: psi0 not normalized, dt < 0, or non-finite potential
        BlowUpDetected: non-finite values during the evolution
    """
    grid = psi0.grid
    if dt < 0.0 or n_steps < 0:
        raise StateError(f"need dt >= 0 and n_steps >= 0, got dt={dt}, n_steps={n_steps}")
    n0 = norm(psi0.values, grid)
    if not abs(n0 - 1.0) <= NORM_TOLERANCE:
        raise StateError(f"initial state is not normalized (norm = {n0:.15g})")
    steps = snapshot_steps(n_steps, stride)
    times = np.array([k * dt for k in steps])

    if dt == 0.0:
        return FullTrajectory(
            times=times,
            snapshots=[psi0 for _ in steps],
            norm_drift=abs(n0 - 1.0),
            dt=dt,
        )

    W = total_potential(grid, mp)
    if not np.all(np.isfinite(W)):
        raise StateError("potential is not finite on the grid")
    w_max = float(np.max(np.abs(W)))
    if dt * w_max > np.pi:
        log_solver_warning(
            "evolve_full", "cfl_advisory", dt=dt, max_potential=w_max, limit=np.pi / w_max
        )
    half = np.exp(-0.5j * dt * W)
    kinetic = np.exp(-1j * dt * kinetic_symbol(grid, mp))

    psi = np.array(psi0.values, dtype=complex)
    snapshots = [psi0]
    drift = abs(n0 - 1.0)
    targets = iter(steps[1:])
    target = next(targets, None)
    for step in range(1, n_steps + 1):
        psi = half * sp_fft.ifft2(kinetic * sp_fft.fft2(half * psi))
        if not np.all(np.isfinite(psi)):
            raise BlowUpDetected(f"non-finite wave function at t={step * dt:.6g}")
        if step == target:
            drift = max(drift, abs(norm(psi, grid) - 1.0))
            snapshots.append(ComplexField2D(grid=grid, values=psi))
            target = next(targets, None)
    return FullTrajectory(times=times, snapshots=snapshots, norm_drift=drift, dt=dt)


def energy(psi: ComplexField2D, mp: ModelParams) -> float:
    """<psi|H|psi> with the kinetic part by spectral quadrature (Parseval)."""
    grid = psi.grid
    values = psi.values
    coef = sp_fft.fft2(values)
    kinetic = np.sum(kinetic_symbol(grid, mp) * np.abs(coef) ** 2) / values.size
    potential = np.sum(total_potential(grid, mp) * np.abs(values) ** 2)
    return float((kinetic + potential) * grid.dx * grid.dy)


def position_variance(psi: ComplexField2D, axis: int) -> float:
    """Variance of x (axis 0) or y (axis 1) under |psi|^2."""
    grid = psi.grid
    rho = np.abs(psi.values) ** 2
    coord = grid.x[:, None] if axis == 0 else grid.y[None, :]
    mass = np.sum(rho)
    mean = np.sum(coord * rho) / mass
    return float(np.sum((coord - mean) ** 2 * rho) / mass)
