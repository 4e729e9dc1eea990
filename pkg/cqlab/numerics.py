"""
Grids, sampled fields, derivatives, quadrature and interpolation.

Every solver works on a uniform tensor grid over (x, y), periodic on both axes
by default. Field types are frozen pydantic records around read-only numpy
arrays; the raw-array helpers (spectral_derivative, fd_derivative,
fourier_interpolate, ...) are what the inner loops call.
"""

from __future__ import annotations

from typing import Callable, ClassVar, Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import fft as sp_fft
from scipy.interpolate import PchipInterpolator

from cqlab.errors import GridError, MonotonicityError

Axis = Literal["x", "y"]
DerivativeMode = Literal["spectral", "fd"]
PotentialFn = Callable[[np.ndarray, np.ndarray], Union[np.ndarray, float]]

_AXIS_INDEX = {"x": 0, "y": 1}


def axis_index(axis: Union[Axis, int]) -> int:
    if isinstance(axis, int):
        if axis not in (0, 1):
            raise GridError(f"axis must be 0 or 1, got {axis}")
        return axis
    try:
        return _AXIS_INDEX[axis]
    except KeyError:
        raise GridError(f"axis must be 'x' or 'y', got {axis!r}") from None


class Grid2D(BaseModel):
    """
    Uniform tensor grid over [x_min, x_max) x [y_min, y_max).

    Nodes sit at x_min + i*dx, i = 0..nx-1 (the upper bound is the periodic
    image of x_min), and likewise in y.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    nx: int = Field(..., ge=8)
    ny: int = Field(..., ge=8)
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    periodic_x: bool = True
    periodic_y: bool = True

    @model_validator(mode="after")
    def _check_bounds(self) -> "Grid2D":
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.y_max > self.y_min:
            raise ValueError("y_max must exceed y_min")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def lx(self) -> float:
        return self.x_max - self.x_min

    @property
    def ly(self) -> float:
        return self.y_max - self.y_min

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y_min + self.dy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) arrays of shape (nx, ny), indexing='ij'."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def coords(self, axis: Union[Axis, int]) -> np.ndarray:
        return self.x if axis_index(axis) == 0 else self.y

    def spacing(self, axis: Union[Axis, int]) -> float:
        return self.dx if axis_index(axis) == 0 else self.dy

    def length(self, axis: Union[Axis, int]) -> float:
        return self.lx if axis_index(axis) == 0 else self.ly

    def is_periodic(self, axis: Union[Axis, int]) -> bool:
        return self.periodic_x if axis_index(axis) == 0 else self.periodic_y

    def wavenumbers(self, axis: Union[Axis, int]) -> np.ndarray:
        """Angular wavenumbers 2*pi*fftfreq along the axis."""
        ax = axis_index(axis)
        n = self.nx if ax == 0 else self.ny
        return 2.0 * np.pi * sp_fft.fftfreq(n, d=self.spacing(ax))


class _SampledField(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    dtype: ClassVar[type] = np.float64

    grid: Grid2D
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v: object) -> np.ndarray:
        return np.array(v, dtype=cls.dtype, copy=True)

    @model_validator(mode="after")
    def _check_samples(self) -> "_SampledField":
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field samples must be finite")
        self.values.setflags(write=False)
        return self


class RealField2D(_SampledField):
    """Real samples of a function of (x, y)."""
    dtype: ClassVar[type] = np.float64


class ComplexField2D(_SampledField):
    """Complex samples of a function of (x, y)."""
    dtype: ClassVar[type] = np.complex128


class RealField1D(BaseModel):
    """Real samples of a function of one coordinate."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    coords: np.ndarray
    values: np.ndarray

    @field_validator("coords", "values", mode="before")
    @classmethod
    def _as_array(cls, v: object) -> np.ndarray:
        return np.array(v, dtype=np.float64, copy=True)

    @model_validator(mode="after")
    def _check_samples(self) -> "RealField1D":
        if self.coords.ndim != 1 or self.values.shape != self.coords.shape:
            raise ValueError("coords and values must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.coords)) and np.all(np.isfinite(self.values))):
            raise ValueError("field samples must be finite")
        self.coords.setflags(write=False)
        self.values.setflags(write=False)
        return self


Field2D = Union[RealField2D, ComplexField2D]


def like(field: Field2D, values: np.ndarray) -> Field2D:
    """New field on the same grid; complex values promote a real field."""
    if np.iscomplexobj(values):
        return ComplexField2D(grid=field.grid, values=values)
    return type(field)(grid=field.grid, values=values)


# ---------------------------------------------------------------------------
# Raw-array kernels
# ---------------------------------------------------------------------------

def spectral_derivative(values: np.ndarray, k: np.ndarray, axis: int, order: int) -> np.ndarray:
    """Fourier derivative of order 1 or 2 along `axis` (Nyquist mode dropped for order 1)."""
    n = values.shape[axis]
    shape = [1] * values.ndim
    shape[axis] = n
    kk = k.reshape(shape)
    if order == 1:
        mult = 1j * kk
        if n % 2 == 0:
            mult = mult.copy()
            idx = [0] * values.ndim
            idx[axis] = n // 2
            mult[tuple(idx)] = 0.0
    elif order == 2:
        mult = -(kk ** 2)
    else:
        raise GridError(f"derivative order must be 1 or 2, got {order}")
    out = sp_fft.ifft(sp_fft.fft(values, axis=axis) * mult, axis=axis)
    return out.real if np.isrealobj(values) else out


def fd_derivative(values: np.ndarray, h: float, axis: int, order: int, periodic: bool) -> np.ndarray:
    """Second-order central differences; one-sided second-order stencils at non-periodic edges."""
    if order not in (1, 2):
        raise GridError(f"derivative order must be 1 or 2, got {order}")
    if periodic:
        fwd = np.roll(values, -1, axis=axis)
        bwd = np.roll(values, 1, axis=axis)
        if order == 1:
            return (fwd - bwd) / (2.0 * h)
        return (fwd - 2.0 * values + bwd) / h ** 2
    first = np.gradient(values, h, axis=axis, edge_order=2)
    if order == 1:
        return first
    return np.gradient(first, h, axis=axis, edge_order=2)


def gradient_1d(values: np.ndarray, h: float) -> np.ndarray:
    """Non-periodic first derivative of a 1-D sample (phases such as theta_A are not periodic)."""
    return np.gradient(values, h, edge_order=2)


def fourier_interpolate(values: np.ndarray, start: float, length: float, query: np.ndarray) -> np.ndarray:
    """
    Trigonometric interpolation along axis 0 of periodic samples.

    values has shape (n,) or (n, m); query is a 1-D array of positions. The
    Nyquist mode of an even-length sample is taken as a cosine so real data
    interpolates to real values.
    """
    values = np.asarray(values)
    squeeze = values.ndim == 1
    v2 = values.reshape(values.shape[0], -1)
    n = v2.shape[0]
    coef = sp_fft.fft(v2, axis=0) / n
    k = 2.0 * np.pi * sp_fft.fftfreq(n, d=length / n)
    offset = np.asarray(query, dtype=float) - start
    basis = np.exp(1j * np.outer(offset, k))
    if n % 2 == 0:
        basis[:, n // 2] = np.cos(k[n // 2] * offset)
    out = basis @ coef
    if np.isrealobj(values):
        out = out.real
    return out[:, 0] if squeeze else out


def wrap_to_pi(angle: np.ndarray) -> np.ndarray:
    """Principal value in [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def sample_potential(fn: PotentialFn, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate a potential on broadcast (x, y) and return a real array of the broadcast shape."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast(x, y).shape
    return np.broadcast_to(np.asarray(fn(x, y), dtype=float), shape).copy()


def complex_step_derivative(fn: PotentialFn, x: np.ndarray, y: np.ndarray, axis: Axis, h: float = 1e-20) -> np.ndarray:
    """
    Partial derivative of an analytic potential by the complex-step method.

    Exact to rounding, evaluates at arbitrary (off-grid) points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast(x, y).shape
    if axis_index(axis) == 0:
        val = fn(x + 1j * h, y + 0j)
    else:
        val = fn(x + 0j, y + 1j * h)
    return np.broadcast_to(np.imag(np.asarray(val, dtype=complex)) / h, shape).copy()


# ---------------------------------------------------------------------------
# Field operations
# ---------------------------------------------------------------------------

def partial_derivative(
    field: Field2D,
    axis: Union[Axis, int],
    order: int,
    mode: DerivativeMode = "spectral",
) -> Field2D:
    """
    Derivative of a sampled field along one axis.

    Args:
        field: Real or complex field
        axis: "x" or "y"
        order: 1 or 2
        mode: "spectral" (Fourier, periodic axes only) or "fd" (second-order
            central differences)

    Raises:
        GridError: spectral mode on a non-periodic axis, or bad order
    """
    grid = field.grid
    ax = axis_index(axis)
    if mode == "spectral":
        if not grid.is_periodic(ax):
            raise GridError(f"spectral derivative requested on non-periodic axis {'xy'[ax]}")
        out = spectral_derivative(field.values, grid.wavenumbers(ax), ax, order)
    elif mode == "fd":
        out = fd_derivative(field.values, grid.spacing(ax), ax, order, grid.is_periodic(ax))
    else:
        raise GridError(f"unknown derivative mode {mode!r}")
    return like(field, out)


def integrate(field: RealField2D, axes: Sequence[Axis] = ("x", "y")) -> Union[float, RealField1D]:
    """
    Riemann-sum quadrature with weight dx (and/or dy).

    Integrating over both axes returns a float; over one axis returns a
    RealField1D on the remaining axis.
    """
    grid = field.grid
    wanted = {axis_index(a) for a in axes}
    if wanted == {0, 1}:
        return float(np.sum(field.values) * grid.dx * grid.dy)
    if wanted == {0}:
        return RealField1D(coords=grid.y, values=np.sum(field.values, axis=0) * grid.dx)
    if wanted == {1}:
        return RealField1D(coords=grid.x, values=np.sum(field.values, axis=1) * grid.dy)
    raise GridError("integrate needs at least one axis")


def interpolate_monotone(samples: RealField1D, query: Union[float, np.ndarray]) -> np.ndarray:
    """
    Monotonicity-preserving piecewise-cubic (PCHIP) interpolation.

    Exact at the nodes; queries outside the sample range are extrapolated
    from the end intervals.

    Raises:
        MonotonicityError: abscissae not strictly increasing
    """
    if np.any(np.diff(samples.coords) <= 0.0):
        raise MonotonicityError("interpolation abscissae must be strictly increasing")
    interp = PchipInterpolator(samples.coords, samples.values, extrapolate=True)
    return np.asarray(interp(np.asarray(query, dtype=float)))
