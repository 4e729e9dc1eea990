"""
Non-local polar representation psi = exp(i (theta_A/eps + theta_B)) R.

theta_A = eps * A(Theta) is a function of x only, theta_B = B(Theta) carries
the y-dependence, where Theta is a continuous branch of arg(psi).

Amplitude floor: nodes with |psi| < r_min that are enclosed by the support
make the phase undefined (NodeDetected). Sub-floor tails connected to the box
edge are exterior; their phase is continued from the support by the same
unwrapping path, so reconstruct(decompose(psi)) reproduces psi everywhere.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage

from cqlab.errors import NodeDetected, RegionError, StateError, WindingDetected
from cqlab.logging_utils import log_solver_warning
from cqlab.numerics import ComplexField2D, Grid2D, RealField1D, RealField2D, wrap_to_pi
from cqlab.operators import AveragingKernel, complement

DEFAULT_R_MIN = 1e-8

_ROW_STRUCTURE = np.array([[0, 0, 0], [1, 1, 1], [0, 0, 0]])


class PolarState(BaseModel):
    """
    The triple (R, theta_A, theta_B) under one averaging operator.

    Attributes:
        R: Amplitude |psi|
        theta_A: Classical phase component, one value per x-node
        theta_B: Quantum phase component with A(theta_B) = 0
        kernel: Averaging operator defining the split
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    R: RealField2D
    theta_A: RealField1D
    theta_B: RealField2D
    kernel: AveragingKernel

    @model_validator(mode="after")
    def _check_split(self) -> "PolarState":
        grid = self.R.grid
        if self.theta_B.grid != grid or self.kernel.grid != grid:
            raise ValueError("R, theta_B and kernel must share one grid")
        if self.theta_A.coords.shape != (grid.nx,):
            raise ValueError("theta_A must have one sample per x-node")
        if np.any(self.R.values < 0.0):
            raise ValueError("R must be nonnegative")
        drift = np.max(np.abs(self.kernel.row_average(self.theta_B.values)))
        scale = max(1.0, float(np.max(np.abs(self.theta_B.values))))
        if drift > 1e-10 * scale:
            raise ValueError(f"A(theta_B) = {drift:.3e} violates the constraint")
        return self

    @property
    def grid(self) -> Grid2D:
        return self.R.grid

    def theta(self) -> np.ndarray:
        """Total non-local phase theta = theta_A + theta_B, shape (nx, ny)."""
        return self.theta_A.values[:, None] + self.theta_B.values

    @classmethod
    def from_arrays(
        cls,
        grid: Grid2D,
        kernel: AveragingKernel,
        R: np.ndarray,
        theta_A: np.ndarray,
        theta_B: np.ndarray,
    ) -> "PolarState":
        return cls(
            R=RealField2D(grid=grid, values=R),
            theta_A=RealField1D(coords=grid.x, values=theta_A),
            theta_B=RealField2D(grid=grid, values=theta_B),
            kernel=kernel,
        )


class Rectangle(BaseModel):
    """Axis-aligned closed rectangle; omitted bounds are unbounded."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    x_min: float = -math.inf
    x_max: float = math.inf
    y_min: float = -math.inf
    y_max: float = math.inf


class Region(BaseModel):
    """Union of rectangles in (x, y)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    rectangles: list[Rectangle] = Field(..., min_length=1)

    @classmethod
    def y_interval(cls, a: float, b: float) -> "Region":
        return cls(rectangles=[Rectangle(y_min=a, y_max=b)])

    @classmethod
    def full(cls) -> "Region":
        return cls(rectangles=[Rectangle()])

    def mask(self, grid: Grid2D) -> np.ndarray:
        X, Y = grid.mesh()
        out = np.zeros(grid.shape, dtype=bool)
        for r in self.rectangles:
            out |= (X >= r.x_min) & (X <= r.x_max) & (Y >= r.y_min) & (Y <= r.y_max)
        return out


# ---------------------------------------------------------------------------
# Unwrapping
# ---------------------------------------------------------------------------

def interior_nodes(amplitude: np.ndarray, r_min: float, rows_only: bool = False) -> np.ndarray:
    """
    Boolean mask of sub-floor nodes not connected to the array edge.

    With rows_only, connectivity runs along axis 1 only, so every row is
    judged as an independent 1-D slice.
    """
    below = np.asarray(amplitude) < r_min
    if not below.any():
        return np.zeros_like(below)
    structure = _ROW_STRUCTURE if rows_only else None
    labels, _ = ndimage.label(below, structure=structure)
    edge = [labels[:, 0], labels[:, -1]]
    if not rows_only:
        edge += [labels[0, :], labels[-1, :]]
    exterior = np.unique(np.concatenate(edge))
    exterior = exterior[exterior > 0]
    return below & ~np.isin(labels, exterior)


def _unwrap_from(line: np.ndarray, start: int) -> np.ndarray:
    out = np.empty_like(line)
    out[start:] = np.unwrap(line[start:])
    out[: start + 1] = np.unwrap(line[start::-1])[::-1]
    return out


def _check_winding(theta: np.ndarray, angle: np.ndarray, amp: np.ndarray, r_min: float, grid: Grid2D) -> None:
    full = amp >= r_min
    if grid.periodic_x:
        cols = np.flatnonzero(np.all(full, axis=0))
        if cols.size:
            closing = theta[-1, cols] + wrap_to_pi(angle[0, cols] - angle[-1, cols]) - theta[0, cols]
            if np.max(np.abs(closing)) > np.pi:
                raise WindingDetected("phase winds around the periodic x-axis")
    if grid.periodic_y:
        rows = np.flatnonzero(np.all(full, axis=1))
        if rows.size:
            closing = theta[rows, -1] + wrap_to_pi(angle[rows, 0] - angle[rows, -1]) - theta[rows, 0]
            if np.max(np.abs(closing)) > np.pi:
                raise WindingDetected("phase winds around the periodic y-axis")


def unwrap_phase(psi: ComplexField2D, r_min: float = DEFAULT_R_MIN) -> RealField2D:
    """
    Continuous branch Theta of arg(psi).

    Path: principal argument at the anchor node argmax|psi|, 1-D unwrapping
    along the y-line through the anchor, then along x outward from the anchor
    column for every y.

    Raises:
        NodeDetected: a sub-floor node enclosed by the support
        WindingDetected: accumulated phase around a fully supported periodic line exceeds pi
    """
    values = psi.values
    amp = np.abs(values)
    if float(np.max(amp)) < r_min:
        raise NodeDetected("amplitude is below the floor everywhere")
    enclosed = interior_nodes(amp, r_min)
    if enclosed.any():
        i, j = np.argwhere(enclosed)[0]
        grid = psi.grid
        raise NodeDetected(
            f"|psi| < {r_min:g} inside the support at x={grid.x[i]:.6g}, y={grid.y[j]:.6g}"
        )
    angle = np.angle(values)
    i0, j0 = np.unravel_index(int(np.argmax(amp)), amp.shape)
    column = _unwrap_from(angle[i0, :], j0)
    shift = (column - angle[i0, :])[None, :]

    theta = np.empty_like(angle)
    theta[i0:, :] = np.unwrap(angle[i0:, :], axis=0) + shift
    theta[: i0 + 1, :] = np.unwrap(angle[i0::-1, :], axis=0)[::-1] + shift
    _check_winding(theta, angle, amp, r_min, psi.grid)
    return RealField2D(grid=psi.grid, values=theta)


def unwrap_rows(values: np.ndarray, grid: Grid2D, r_min: float = DEFAULT_R_MIN) -> np.ndarray:
    """
    Unwrap every x-row of a complex array independently along y.

    Each row is anchored at its own amplitude maximum, so rows differ from a
    2-D unwrapping only by per-row constants (which B removes).

    Raises:
        NodeDetected: a row has a sub-floor node enclosed by its support
        WindingDetected: a fully supported periodic row winds
    """
    amp = np.abs(values)
    enclosed = interior_nodes(amp, r_min, rows_only=True)
    if enclosed.any():
        i, j = np.argwhere(enclosed)[0]
        raise NodeDetected(
            f"slice x={grid.x[i]:.6g} has |psi| < {r_min:g} inside its support at y={grid.y[j]:.6g}"
        )
    angle = np.angle(values)
    anchors = np.argmax(amp, axis=1)
    theta = np.empty_like(angle)
    for i, j0 in enumerate(anchors):
        theta[i] = _unwrap_from(angle[i], int(j0))
    if grid.periodic_y:
        rows = np.flatnonzero(np.all(amp >= r_min, axis=1))
        if rows.size:
            closing = theta[rows, -1] + wrap_to_pi(angle[rows, 0] - angle[rows, -1]) - theta[rows, 0]
            if np.max(np.abs(closing)) > np.pi:
                raise WindingDetected("slice phase winds around the periodic y-axis")
    return theta


# ---------------------------------------------------------------------------
# Decomposition and reconstruction
# ---------------------------------------------------------------------------

def _require_epsilon(epsilon: float) -> None:
    if not epsilon > 0.0:
        raise StateError(f"epsilon must be positive, got {epsilon}")


def decompose(
    psi: ComplexField2D,
    epsilon: float,
    kernel: AveragingKernel,
    r_min: float = DEFAULT_R_MIN,
) -> PolarState:
    """
    Split psi into (R, theta_A, theta_B) with theta_A = eps*A(Theta), theta_B = B(Theta).

    Raises:
        StateError: epsilon <= 0
        NodeDetected, WindingDetected: from unwrap_phase
    """
    _require_epsilon(epsilon)
    theta = unwrap_phase(psi, r_min).values
    row = kernel.row_average(theta)
    return PolarState.from_arrays(
        psi.grid,
        kernel,
        R=np.abs(psi.values),
        theta_A=epsilon * row,
        theta_B=theta - row[:, None],
    )


def reconstruct(state: PolarState, epsilon: float) -> ComplexField2D:
    """psi = exp(i (theta_A/eps + theta_B)) R."""
    _require_epsilon(epsilon)
    phase = state.theta_A.values[:, None] / epsilon + state.theta_B.values
    return ComplexField2D(grid=state.grid, values=state.R.values * np.exp(1j * phase))


def change_kernel(state: PolarState, epsilon: float, kernel_to: AveragingKernel) -> PolarState:
    """
    Re-split the same wave function under another averaging operator.

    theta_A' = theta_A + eps*A'(theta_B), theta_B' = B'(theta_B). epsilon = 0
    gives the limit relation theta' = T(theta), with theta_A unchanged.
    """
    if epsilon < 0.0:
        raise StateError(f"epsilon must be nonnegative, got {epsilon}")
    tb = state.theta_B.values
    return PolarState.from_arrays(
        state.grid,
        kernel_to,
        R=state.R.values,
        theta_A=state.theta_A.values + epsilon * kernel_to.row_average(tb),
        theta_B=complement(kernel_to, tb),
    )


# ---------------------------------------------------------------------------
# Position measurement
# ---------------------------------------------------------------------------

def region_mask(region: Region, grid: Grid2D) -> np.ndarray:
    """Grid mask of a region; raises RegionError if no node lies inside."""
    mask = region.mask(grid)
    if not mask.any():
        raise RegionError("measurement region contains no grid node")
    return mask


def clamp_mass(region: Region, grid: Grid2D, r_min: float = DEFAULT_R_MIN) -> float:
    """Probability added by clamping R to r_min outside the region."""
    outside = ~region_mask(region, grid)
    return float(np.count_nonzero(outside)) * r_min ** 2 * grid.dx * grid.dy


def measure_position(
    state: PolarState,
    region: Region,
    renormalize: bool = False,
    r_min: float = DEFAULT_R_MIN,
) -> PolarState:
    """
    Position measurement: R <- chi_Omega R, clamped to r_min outside Omega.

    Phases are untouched. With renormalize the result carries unit total
    probability. Nonzero clamp mass is logged as a solver warning.

    Raises:
        RegionError: Omega contains no grid node
    """
    grid = state.grid
    mask = region_mask(region, grid)
    added = clamp_mass(region, grid, r_min)
    if added > 0.0:
        log_solver_warning("measure_position", "clamp_mass", clamp_mass=added, r_min=r_min)
    R = np.where(mask, state.R.values, r_min)
    if renormalize:
        total = float(np.sum(R ** 2) * grid.dx * grid.dy)
        R = R / math.sqrt(total)
    return state.model_copy(update={"R": RealField2D(grid=grid, values=R)})


def total_probability(state: PolarState) -> float:
    grid = state.grid
    return float(np.sum(state.R.values ** 2) * grid.dx * grid.dy)


def constraint_drift(state: PolarState) -> float:
    """max |A(theta_B)|."""
    return float(np.max(np.abs(state.kernel.row_average(state.theta_B.values))))


def support_mask(R: np.ndarray, fraction: float) -> np.ndarray:
    """Nodes with R >= fraction * max R."""
    return R >= fraction * float(np.max(R))


def phase_offset(
    reference: np.ndarray, candidate: np.ndarray, weights: Optional[np.ndarray] = None
) -> float:
    """Weighted mean of reference - candidate (global-constant alignment of phases)."""
    diff = np.asarray(reference) - np.asarray(candidate)
    if weights is None:
        return float(np.mean(diff))
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * diff) / np.sum(w))
