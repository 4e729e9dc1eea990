"""
Unit tests for cqlab.full_qm (exact epsilon-dependent solver).

Covers:
- Free Gaussian spreading in y
- Norm conservation and Strang second-order convergence
- Energy of the decoupled ground state and its conservation
- Scaling to dimensionless variables
- Input validation, per-step blow-up detection and snapshot bookkeeping
"""

from types import SimpleNamespace

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import fft as sp_fft

from cqlab import full_qm
from cqlab.errors import BlowUpDetected, StateError
from cqlab.expr import parse_potential
from cqlab.full_qm import (
    DimensionalParams,
    ModelParams,
    energy,
    evolve_full,
    nondimensionalize,
    norm,
    position_variance,
    snapshot_steps,
)
from cqlab.models import InitialStateSpec
from cqlab.numerics import ComplexField2D, Grid2D
from cqlab.operators import point_eval, window_mean
from cqlab.states import initial_wavefunction


def _make_model(U: str = "0", V: str = "0", epsilon: float = 0.1) -> ModelParams:
    return ModelParams(m1=1.0, m2=1.0, epsilon=epsilon, U=parse_potential(U), V=parse_potential(V))


def _make_psi(grid: Grid2D, epsilon: float, **spec) -> ComplexField2D:
    defaults = {"x0": 0.0, "sigma_x": 0.5, "sigma_y": 0.5}
    defaults.update(spec)
    return initial_wavefunction(grid, InitialStateSpec(**defaults), epsilon, point_eval(grid, 0.0))


# ---------------------------------------------------------------------------
# Analytic checks
# ---------------------------------------------------------------------------


class TestFreeEvolution:
    def test_gaussian_spreading_law(self):
        grid = Grid2D(nx=32, ny=256, x_min=-5.0, x_max=5.0, y_min=-12.0, y_max=12.0)
        mp = _make_model()
        psi0 = _make_psi(grid, mp.epsilon)
        assert position_variance(psi0, axis=1) == pytest.approx(0.25, abs=1e-9)
        traj = evolve_full(psi0, mp, dt=0.01, n_steps=100)
        assert traj.times[-1] == pytest.approx(1.0)
        assert position_variance(traj.final, axis=1) == pytest.approx(1.25, abs=1e-6)

    def test_energy_constant_for_free_packet(self):
        grid = Grid2D(nx=32, ny=64, x_min=-5.0, x_max=5.0, y_min=-6.0, y_max=6.0)
        mp = _make_model()
        psi0 = _make_psi(grid, mp.epsilon, p0=0.2, ky=0.5)
        traj = evolve_full(psi0, mp, dt=1e-3, n_steps=500, stride=100)
        energies = [energy(psi, mp) for psi in traj.snapshots]
        assert max(abs(e - energies[0]) for e in energies) <= 1e-8 * abs(energies[0])


class TestGroundState:
    def test_decoupled_ground_state_energy(self):
        grid = Grid2D(nx=32, ny=64, x_min=-4.0, x_max=4.0, y_min=-6.0, y_max=6.0)
        epsilon = 0.2
        mp = _make_model(V="y^2/2", epsilon=epsilon)
        psi = _make_psi(grid, epsilon, sigma_y=np.sqrt(0.5))
        # x part: eps <k^2>/2 with <k^2> = 1/(4 sigma_x^2) = 1; y part: omega/2
        assert energy(psi, mp) == pytest.approx(0.5 + 0.5 * epsilon, abs=1e-8)


# ---------------------------------------------------------------------------
# Conservation and order
# ---------------------------------------------------------------------------


class TestSplitStep:
    def _coupled(self):
        grid = Grid2D(nx=32, ny=32, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0)
        mp = _make_model(U="x^2/2", V="y^2/2 + 0.2*x*y", epsilon=0.5)
        psi0 = _make_psi(grid, mp.epsilon, x0=0.3, sigma_x=0.4, sigma_y=np.sqrt(0.5), p0=0.5)
        return grid, mp, psi0

    def test_norm_drift_per_thousand_steps(self):
        _, mp, psi0 = self._coupled()
        traj = evolve_full(psi0, mp, dt=1e-3, n_steps=1000, stride=250)
        assert len(traj.snapshots) == 5
        assert traj.norm_drift <= 1e-10

    def test_dt_halving_ratio(self):
        _, mp, psi0 = self._coupled()
        t = 0.2
        ref = evolve_full(psi0, mp, dt=t / 320, n_steps=320).final.values
        coarse = evolve_full(psi0, mp, dt=t / 20, n_steps=20).final.values
        fine = evolve_full(psi0, mp, dt=t / 40, n_steps=40).final.values
        ratio = np.max(np.abs(coarse - ref)) / np.max(np.abs(fine - ref))
        assert 3.5 <= ratio <= 4.5

    def test_zero_step_returns_initial_state(self):
        _, mp, psi0 = self._coupled()
        traj = evolve_full(psi0, mp, dt=0.0, n_steps=10, stride=5)
        assert all(np.array_equal(s.values, psi0.values) for s in traj.snapshots)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


class TestValidation:
    def test_unnormalized_state_rejected(self):
        grid = Grid2D(nx=16, ny=16, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0)
        psi = ComplexField2D(grid=grid, values=np.ones(grid.shape))
        with pytest.raises(StateError):
            evolve_full(psi, _make_model(), dt=1e-3, n_steps=1)

    def test_negative_dt_rejected(self):
        grid = Grid2D(nx=16, ny=16, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0)
        psi = _make_psi(grid, 0.1)
        assert norm(psi.values, grid) == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(StateError):
            evolve_full(psi, _make_model(), dt=-1e-3, n_steps=1)

    def test_blow_up_between_snapshots_is_caught(self, monkeypatch):
        grid = Grid2D(nx=32, ny=32, x_min=-5.0, x_max=5.0, y_min=-6.0, y_max=6.0)
        mp = _make_model(V="y^2/2")
        psi0 = _make_psi(grid, mp.epsilon)
        calls = {"ifft2": 0}

        def ifft2(values, *args, **kwargs):
            calls["ifft2"] += 1
            out = sp_fft.ifft2(values, *args, **kwargs)
            return np.full_like(out, np.nan) if calls["ifft2"] == 3 else out

        monkeypatch.setattr(full_qm, "sp_fft", SimpleNamespace(fft2=sp_fft.fft2, ifft2=ifft2))
        with pytest.raises(BlowUpDetected, match=r"t=0\.003"):
            evolve_full(psi0, mp, dt=1e-3, n_steps=10, stride=10)

    def test_non_finite_initial_norm_rejected(self, monkeypatch):
        grid = Grid2D(nx=32, ny=32, x_min=-5.0, x_max=5.0, y_min=-6.0, y_max=6.0)
        mp = _make_model()
        psi0 = _make_psi(grid, mp.epsilon)
        monkeypatch.setattr(full_qm, "norm", lambda values, grid: float("nan"))
        with pytest.raises(StateError):
            evolve_full(psi0, mp, dt=1e-3, n_steps=1)

    def test_epsilon_range(self):
        with pytest.raises(ValidationError):
            _make_model(epsilon=1.5)
        with pytest.raises(ValidationError):
            _make_model(epsilon=0.0)

    def test_snapshot_steps(self):
        assert snapshot_steps(10, 3) == [0, 3, 6, 9, 10]
        assert snapshot_steps(10, None) == [0, 10]
        assert snapshot_steps(0, None) == [0]


class TestScaling:
    def test_nondimensionalize(self):
        dp = DimensionalParams(
            M1=100.0,
            M2=2.0,
            L1=3.0,
            L2=0.5,
            T_scale=4.0,
            hbar=2.0,
            U_dim=parse_potential("x^2"),
            V_dim=parse_potential("x*y"),
        )
        mp = nondimensionalize(dp)
        assert mp.epsilon == pytest.approx(0.02)
        assert mp.m1 == pytest.approx(2.0 * 9.0 / 8.0)
        assert mp.m2 == pytest.approx(2.0 * 0.25 / 8.0)
        # U~(x) = T M2 / (hbar M1) U(L1 x)
        assert float(mp.sample_U(np.array([1.0]))[0]) == pytest.approx(4.0 * 2.0 / 200.0 * 9.0)
        # V~(x, y) = T / hbar V(L1 x, L2 y)
        assert float(mp.sample_V(np.array([1.0]), np.array([2.0]))[0]) == pytest.approx(2.0 * 3.0 * 1.0)

    def test_heavier_quantum_particle_rejected(self):
        with pytest.raises(ValidationError):
            DimensionalParams(
                M1=1.0,
                M2=2.0,
                L1=1.0,
                L2=1.0,
                T_scale=1.0,
                hbar=1.0,
                U_dim=parse_potential("0"),
                V_dim=parse_potential("0"),
            )

    def test_window_kernel_state_has_unit_norm(self):
        grid = Grid2D(nx=16, ny=16, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0)
        psi = initial_wavefunction(grid, InitialStateSpec(), 0.3, window_mean(grid, -1.0, 1.0))
        assert norm(psi.values, grid) == pytest.approx(1.0, abs=1e-12)
