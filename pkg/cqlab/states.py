"""
Initial data.

Every experiment starts from epsilon-independent polar data (R0, theta_A0,
theta_B0); the wave function at a given epsilon is its reconstruction, so the
first-order correction starts at zero exactly.
"""

import numpy as np

from cqlab.errors import StateError
from cqlab.models import InitialStateSpec
from cqlab.numerics import ComplexField2D, Grid2D
from cqlab.operators import AveragingKernel, complement
from cqlab.polar import PolarState, reconstruct


def gaussian_amplitude(grid: Grid2D, spec: InitialStateSpec) -> np.ndarray:
    """
    Correlated Gaussian amplitude, normalized so that sum(R^2) dx dy = 1.

    R0 ~ exp(-(x-x0)^2/(4 sx^2) - (y-y0)^2/(4 sy^2) - gamma (x-x0)(y-y0))

    Raises:
        StateError: nonpositive widths or a correlation that makes R0 unbounded
    """
    if spec.sigma_x <= 0.0 or spec.sigma_y <= 0.0:
        raise StateError("Gaussian widths must be positive")
    # quadratic form must stay positive definite
    if spec.correlation ** 2 >= 1.0 / (4.0 * spec.sigma_x ** 2 * spec.sigma_y ** 2):
        raise StateError(
            f"correlation {spec.correlation} is too strong for widths "
            f"({spec.sigma_x}, {spec.sigma_y})"
        )
    X, Y = grid.mesh()
    dx = X - spec.x0
    dy = Y - spec.y0
    R = np.exp(
        -dx ** 2 / (4.0 * spec.sigma_x ** 2)
        - dy ** 2 / (4.0 * spec.sigma_y ** 2)
        - spec.correlation * dx * dy
    )
    norm = np.sqrt(np.sum(R ** 2) * grid.dx * grid.dy)
    return R / norm


def gaussian_polar_state(grid: Grid2D, spec: InitialStateSpec, kernel: AveragingKernel) -> PolarState:
    """Polar initial data: theta_A0 = p0 (x - x0) - c (x - x0)^2/2, theta_B0 = B(ky y + kappa x y)."""
    X, Y = grid.mesh()
    theta_B = complement(kernel, spec.ky * Y + spec.phase_coupling * X * Y)
    return PolarState.from_arrays(
        grid,
        kernel,
        R=gaussian_amplitude(grid, spec),
        theta_A=spec.p0 * (grid.x - spec.x0) - 0.5 * spec.focusing * (grid.x - spec.x0) ** 2,
        theta_B=theta_B,
    )


def initial_wavefunction(
    grid: Grid2D, spec: InitialStateSpec, epsilon: float, kernel: AveragingKernel
) -> ComplexField2D:
    """psi0 at a given epsilon, reconstructed from the shared polar data."""
    return reconstruct(gaussian_polar_state(grid, spec, kernel), epsilon)
