"""
Unit tests for cqlab.first_order (first-order epsilon correction).

Covers:
- Agreement of the closed-form tendency with the complex-form stepper
- Linearity of the correction system in (mu, omega)
- Decoupled eigenstate: nu = -E t, mu = omega = 0
- Backreaction appears in nu on the coupled benchmark
- Corrected reconstruction and its amplitude guard
"""

import numpy as np
import pytest
from pydantic import ValidationError

from cqlab.cq_limit import evolve_limit
from cqlab.errors import CorrectedAmplitudeError, StateError
from cqlab.expr import parse_potential
from cqlab.first_order import (
    CorrectionState,
    corrected_reconstruct,
    correction_tendency,
    evolve_correction,
    stepper_tendency,
)
from cqlab.full_qm import ModelParams
from cqlab.models import InitialStateSpec
from cqlab.numerics import Grid2D
from cqlab.operators import complement, window_mean
from cqlab.polar import PolarState, reconstruct, support_mask
from cqlab.states import gaussian_polar_state


def _make_model(U: str = "x^2/2", V: str = "y^2/2 + 0.2*x*y", epsilon: float = 0.1) -> ModelParams:
    return ModelParams(m1=1.0, m2=1.0, epsilon=epsilon, U=parse_potential(U), V=parse_potential(V))


def _periodic_zeroth():
    """Gaussian R with a smooth periodic theta_B on a 64x64 box."""
    grid = Grid2D(nx=64, ny=64, x_min=-5.0, x_max=5.0, y_min=-5.0, y_max=5.0)
    kernel = window_mean(grid, -1.0, 1.0)
    X, Y = grid.mesh()
    R = np.exp(-(X ** 2 + Y ** 2))
    R /= np.sqrt(np.sum(R ** 2) * grid.dx * grid.dy)
    wave = 0.3 * np.sin(2 * np.pi * (Y - grid.y_min) / grid.ly) * np.cos(2 * np.pi * (X - grid.x_min) / grid.lx)
    zeroth = PolarState.from_arrays(grid, kernel, R=R, theta_A=0.5 * grid.x, theta_B=complement(kernel, wave))
    return grid, kernel, zeroth


def _smooth_correction(grid, kernel, zeroth, scale: float = 1.0) -> CorrectionState:
    X, Y = grid.mesh()
    mu = 0.2 * zeroth.R.values * np.cos(2 * np.pi * (Y - grid.y_min) / grid.ly)
    omega = complement(kernel, 0.1 * np.cos(2 * np.pi * (Y - grid.y_min) / grid.ly))
    return CorrectionState.from_arrays(grid, kernel, scale * mu, np.zeros(grid.nx), scale * omega)


# ---------------------------------------------------------------------------
# Tendencies
# ---------------------------------------------------------------------------


class TestTendency:
    @pytest.mark.parametrize("with_correction", [False, True])
    def test_closed_form_matches_stepper(self, with_correction):
        grid, kernel, zeroth = _periodic_zeroth()
        corr = (
            _smooth_correction(grid, kernel, zeroth)
            if with_correction
            else CorrectionState.zero(grid, kernel)
        )
        mp = _make_model()
        d_mu, d_nu, d_omega = correction_tendency(zeroth, corr, mp)
        s_mu, s_nu, s_omega = stepper_tendency(zeroth, corr, mp)

        live = support_mask(zeroth.R.values, 1e-3)
        rows = live.any(axis=1)
        assert np.max(np.abs(d_mu - s_mu)) < 1e-6
        assert np.max(np.abs(d_nu - s_nu)[rows]) < 1e-6
        assert np.max(np.abs(d_omega - s_omega)[live]) < 1e-6

    def test_linear_in_mu_and_omega(self):
        grid, kernel, zeroth = _periodic_zeroth()
        mp = _make_model()
        base = correction_tendency(zeroth, CorrectionState.zero(grid, kernel), mp)
        one = correction_tendency(zeroth, _smooth_correction(grid, kernel, zeroth, 1.0), mp)
        two = correction_tendency(zeroth, _smooth_correction(grid, kernel, zeroth, 2.0), mp)
        for b, o, t in zip(base, one, two):
            scale = max(1.0, float(np.max(np.abs(t))))
            assert np.max(np.abs((t - b) - 2.0 * (o - b))) <= 1e-9 * scale

    def test_omega_constraint_enforced(self):
        grid, kernel, _ = _periodic_zeroth()
        with pytest.raises(ValidationError):
            CorrectionState.from_arrays(
                grid, kernel, np.zeros(grid.shape), np.zeros(grid.nx), np.ones(grid.shape)
            )
        with pytest.raises(ValidationError):
            CorrectionState.from_arrays(
                grid, kernel, np.zeros(grid.shape), np.zeros(grid.nx + 1), np.zeros(grid.shape)
            )


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


class TestEvolveCorrection:
    def test_decoupled_eigenstate(self):
        grid = Grid2D(nx=32, ny=48, x_min=-5.0, x_max=5.0, y_min=-7.0, y_max=7.0)
        kernel = window_mean(grid, -1.0, 1.0)
        mp = _make_model(U="0", V="y^2/2")
        spec = InitialStateSpec(x0=0.0, sigma_x=0.5, sigma_y=np.sqrt(0.5))
        state0 = gaussian_polar_state(grid, spec, kernel)
        limit = evolve_limit(state0, mp, dt=1e-3, n_steps=500, stride=250)
        traj = evolve_correction(limit, CorrectionState.zero(grid, kernel), mp, kernel, dt=1e-3, stride=250)

        assert traj.times.tolist() == pytest.approx([0.0, 0.25, 0.5])
        live = support_mask(state0.R.values, 1e-3)
        rows = live.any(axis=1)
        for t, corr in zip(traj.times, traj.corrections):
            assert np.max(np.abs(corr.mu.values[live])) <= 1e-8
            assert np.max(np.abs(corr.omega.values[live])) <= 1e-8
            # ground-state energy 1/2 of the quantum oscillator
            assert np.allclose(corr.nu.values[rows], -0.5 * t, atol=1e-8)
        assert traj.zeroth_mismatch is not None
        assert traj.zeroth_mismatch <= 1e-5

    def test_backreaction_appears_in_nu(self):
        grid = Grid2D(nx=64, ny=64, x_min=-4.0, x_max=4.0, y_min=-6.0, y_max=6.0)
        kernel = window_mean(grid, -1.0, 1.0)
        mp = _make_model()
        spec = InitialStateSpec(x0=0.3, sigma_x=0.4, sigma_y=np.sqrt(0.5), p0=0.5)
        state0 = gaussian_polar_state(grid, spec, kernel)
        limit = evolve_limit(state0, mp, dt=1e-3, n_steps=500, stride=250)
        traj = evolve_correction(limit, CorrectionState.zero(grid, kernel), mp, kernel, dt=1e-3, stride=250)

        assert traj.constraint_drift <= 1e-9
        final = traj.corrections[-1]
        rows = support_mask(traj.zeroth[-1].R.values, 1e-3).any(axis=1)
        nu_x = np.gradient(final.nu.values, grid.dx)
        assert np.max(np.abs(nu_x[rows])) > 1e-6

    def test_coevolved_zeroth_order_tracks_the_lagrangian_solution(self):
        # the stepper co-evolves its own Eulerian zeroth order
        grid = Grid2D(nx=64, ny=64, x_min=-4.0, x_max=4.0, y_min=-6.0, y_max=6.0)
        kernel = window_mean(grid, -1.0, 1.0)
        mp = _make_model()
        spec = InitialStateSpec(x0=0.3, sigma_x=0.4, sigma_y=np.sqrt(0.5), p0=0.5)
        state0 = gaussian_polar_state(grid, spec, kernel)
        limit = evolve_limit(state0, mp, dt=1e-3, n_steps=500, stride=250)
        traj = evolve_correction(limit, CorrectionState.zero(grid, kernel), mp, kernel, dt=1e-3, stride=250)

        assert traj.zeroth_mismatch is not None
        assert traj.zeroth_mismatch <= 1e-3
        for mine, ref in zip(traj.zeroth, limit.snapshots):
            assert np.max(np.abs(mine.R.values - ref.R.values)) <= 1e-3

    def test_nonpositive_dt_rejected(self):
        grid = Grid2D(nx=16, ny=16, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0)
        kernel = window_mean(grid, -1.0, 1.0)
        mp = _make_model(U="0", V="y^2/2")
        state0 = gaussian_polar_state(grid, InitialStateSpec(), kernel)
        limit = evolve_limit(state0, mp, dt=1e-2, n_steps=2)
        with pytest.raises(StateError):
            evolve_correction(limit, CorrectionState.zero(grid, kernel), mp, kernel, dt=0.0)


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


class TestCorrectedReconstruct:
    def test_zero_correction_is_plain_reconstruction(self):
        grid, kernel, zeroth = _periodic_zeroth()
        psi = corrected_reconstruct(zeroth, CorrectionState.zero(grid, kernel), 0.1)
        assert np.allclose(psi.values, reconstruct(zeroth, 0.1).values, rtol=0.0, atol=1e-12)

    def test_nonpositive_amplitude_rejected(self):
        grid, kernel, zeroth = _periodic_zeroth()
        corr = CorrectionState.from_arrays(
            grid, kernel, -10.0 * zeroth.R.values, np.zeros(grid.nx), np.zeros(grid.shape)
        )
        with pytest.raises(CorrectedAmplitudeError):
            corrected_reconstruct(zeroth, corr, 0.1)

    def test_nonpositive_epsilon_rejected(self):
        grid, kernel, zeroth = _periodic_zeroth()
        with pytest.raises(StateError):
            corrected_reconstruct(zeroth, CorrectionState.zero(grid, kernel), 0.0)
