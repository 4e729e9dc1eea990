"""
Projection algebra on the quantum coordinate.

An AveragingKernel realizes a projection A acting along y: a window mean, a
general unit-mass weight, or point evaluation. B = 1 - A is its complement,
exp(tau A) = e^tau A + B, and T = 1 + A - A' maps phases between two choices
of A.

All three variants reduce a field row-wise to one value per x; the result is
replicated along y so that d/dy(A phi) is exactly zero.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from cqlab.errors import KernelError
from cqlab.numerics import Field2D, Grid2D, like


class KernelKind(str, Enum):
    """Averaging operator variants."""
    WINDOW = "window"
    GENERAL = "kernel"
    POINT = "point"


class AveragingKernel(BaseModel):
    """
    A grid-bound averaging operator.

    Attributes:
        kind: Variant
        grid: Grid the operator acts on
        a, b: Window bounds (WINDOW) or evaluation point (POINT, a only)
        nodes: y-node indices the operator reads (window members, or the snapped point)
        weights: Per-node weights for GENERAL kernels (renormalized to unit sum)
        snap_distance: |a - y_node| for POINT kernels
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    kind: KernelKind
    grid: Grid2D
    a: Optional[float] = None
    b: Optional[float] = None
    nodes: np.ndarray
    weights: Optional[np.ndarray] = None
    snap_distance: float = 0.0

    @model_validator(mode="after")
    def _freeze_arrays(self) -> "AveragingKernel":
        self.nodes.setflags(write=False)
        if self.weights is not None:
            self.weights.setflags(write=False)
        return self

    def describe(self) -> str:
        if self.kind is KernelKind.WINDOW:
            return f"window[{self.a:g},{self.b:g}]"
        if self.kind is KernelKind.POINT:
            return f"point({self.a:g})"
        return "kernel(alpha)"

    def row_average(self, values: np.ndarray) -> np.ndarray:
        """Reduce an (nx, ny) array to its per-x average, shape (nx,)."""
        if self.kind is KernelKind.WINDOW:
            return np.mean(values[:, self.nodes], axis=1)
        if self.kind is KernelKind.POINT:
            return values[:, int(self.nodes[0])].copy()
        return values @ self.weights


def window_mean(grid: Grid2D, a: float, b: float) -> AveragingKernel:
    """
    Exact arithmetic mean over the y-nodes lying in [a, b].

    Raises:
        KernelError: a >= b, window outside the y-domain, or no node inside
    """
    if not a < b:
        raise KernelError(f"window requires a < b, got [{a}, {b}]")
    if a < grid.y_min or b > grid.y_max:
        raise KernelError(
            f"window [{a}, {b}] lies outside the y-domain [{grid.y_min}, {grid.y_max}]"
        )
    y = grid.y
    tol = 1e-12 * max(1.0, abs(grid.ly))
    nodes = np.flatnonzero((y >= a - tol) & (y <= b + tol))
    if nodes.size == 0:
        raise KernelError(f"window [{a}, {b}] contains no grid node")
    return AveragingKernel(kind=KernelKind.WINDOW, grid=grid, a=a, b=b, nodes=nodes)


def general_kernel(grid: Grid2D, alpha: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]) -> AveragingKernel:
    """
    Weighted average with weight alpha(y); the discrete weights are
    renormalized once so they sum to exactly one.

    Raises:
        KernelError: weights not finite, negative total, or zero mass
    """
    y = grid.y
    raw = alpha(y) if callable(alpha) else alpha
    w = np.broadcast_to(np.asarray(raw, dtype=float), y.shape) * grid.dy
    if not np.all(np.isfinite(w)):
        raise KernelError("kernel weights must be finite")
    total = float(np.sum(w))
    if not total > 0.0:
        raise KernelError("kernel weights must have positive total mass")
    weights = w / total
    return AveragingKernel(
        kind=KernelKind.GENERAL,
        grid=grid,
        nodes=np.arange(grid.ny),
        weights=weights,
    )


def point_eval(grid: Grid2D, a: float) -> AveragingKernel:
    """
    Evaluation at y = a, snapped to the nearest grid node.

    Raises:
        KernelError: a outside the y-domain
    """
    if a < grid.y_min or a > grid.y_max:
        raise KernelError(f"evaluation point {a} lies outside the y-domain")
    y = grid.y
    j = int(np.argmin(np.abs(y - a)))
    return AveragingKernel(
        kind=KernelKind.POINT,
        grid=grid,
        a=a,
        nodes=np.array([j]),
        snap_distance=float(abs(y[j] - a)),
    )


# ---------------------------------------------------------------------------
# Raw-array forms used inside the solvers
# ---------------------------------------------------------------------------

def average(kernel: AveragingKernel, values: np.ndarray) -> np.ndarray:
    """A applied to an (nx, ny) array, replicated along y."""
    row = kernel.row_average(values)
    return np.repeat(row[:, None], values.shape[1], axis=1)


def complement(kernel: AveragingKernel, values: np.ndarray) -> np.ndarray:
    """B = 1 - A applied to an (nx, ny) array."""
    return values - average(kernel, values)


# ---------------------------------------------------------------------------
# Field operations
# ---------------------------------------------------------------------------

def _check_grid(kernel: AveragingKernel, field: Field2D) -> None:
    if field.grid != kernel.grid:
        raise KernelError("field and kernel live on different grids")


def apply_A(kernel: AveragingKernel, field: Field2D) -> Field2D:
    """Averaging operator A; the result is constant along y."""
    _check_grid(kernel, field)
    return like(field, average(kernel, field.values))


def apply_B(kernel: AveragingKernel, field: Field2D) -> Field2D:
    """Complementary projection B = 1 - A."""
    _check_grid(kernel, field)
    return like(field, complement(kernel, field.values))


def exp_scaled_A(kernel: AveragingKernel, tau: float, field: Field2D) -> Field2D:
    """exp(tau A) = e^tau A + B."""
    _check_grid(kernel, field)
    avg = average(kernel, field.values)
    return like(field, np.exp(tau) * avg + (field.values - avg))


def transform_T(kernel_from: AveragingKernel, kernel_to: AveragingKernel, field: Field2D) -> Field2D:
    """T = 1 + A - A', relating phases under kernel_from to phases under kernel_to."""
    if kernel_from.grid != kernel_to.grid:
        raise KernelError("kernels live on different grids")
    _check_grid(kernel_from, field)
    v = field.values
    return like(field, v + average(kernel_from, v) - average(kernel_to, v))


def inverse_transform_T(kernel_from: AveragingKernel, kernel_to: AveragingKernel, field: Field2D) -> Field2D:
    """T^-1 = 1 + A' - A."""
    return transform_T(kernel_to, kernel_from, field)
