"""
Unit tests for cqlab.diagnostics.

Covers:
- Marginals, moments and the boundary-mass guard
- No-backreaction residual (limit) against its hydrodynamic contrast
- Signalling metric for the CQ and HR schemes
- Operator-equivalence residual across kernels
- Log-log slope fit and the epsilon-convergence study (slow)
"""

import numpy as np
import pytest

from cqlab.cq_limit import evolve_limit, evolve_limit_direct
from cqlab.diagnostics import (
    backreaction_residual,
    boundary_mass,
    convergence_study,
    density,
    edge_band,
    fit_slope,
    hydro_as_limit,
    marginal_rho1,
    marginal_rho2,
    operator_equivalence_residual,
    polar_error,
    position_moments,
    projective_error,
    signalling_metric,
)
from cqlab.errors import StateError
from cqlab.expr import parse_potential
from cqlab.full_qm import ModelParams
from cqlab.hybrid_hr import HR_GENERATORS, HydroState, evolve_hydro
from cqlab.models import InitialStateSpec
from cqlab.numerics import ComplexField2D, Grid2D, RealField2D
from cqlab.operators import general_kernel, point_eval, window_mean
from cqlab.polar import Region, change_kernel, support_mask
from cqlab.states import gaussian_polar_state, initial_wavefunction

COUPLED = "y^2/2 + 0.2*x*y"


def _make_grid(nx: int = 48, ny: int = 48) -> Grid2D:
    return Grid2D(nx=nx, ny=ny, x_min=-4.0, x_max=4.0, y_min=-6.0, y_max=6.0)


def _make_model(V: str = COUPLED) -> ModelParams:
    return ModelParams(m1=1.0, m2=1.0, epsilon=0.1, U=parse_potential("x^2/2"), V=parse_potential(V))


def _make_state(grid: Grid2D, kernel=None, **overrides):
    spec = {"x0": 0.3, "sigma_x": 0.4, "sigma_y": np.sqrt(0.5), "p0": 0.5}
    spec.update(overrides)
    return gaussian_polar_state(grid, InitialStateSpec(**spec), kernel or window_mean(grid, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Marginals and moments
# ---------------------------------------------------------------------------


class TestMarginals:
    def test_marginals_carry_the_mass(self):
        grid = _make_grid()
        rho = density(_make_state(grid, correlation=0.3))
        total = float(np.sum(rho.values) * grid.dx * grid.dy)
        assert float(np.sum(marginal_rho1(rho).values) * grid.dx) == pytest.approx(total, abs=1e-12)
        assert float(np.sum(marginal_rho2(rho).values) * grid.dy) == pytest.approx(total, abs=1e-12)
        assert marginal_rho1(rho).values.shape == (grid.nx,)
        assert marginal_rho2(rho).values.shape == (grid.ny,)

    def test_gaussian_moments(self):
        grid = _make_grid(64, 64)
        moments = position_moments(density(_make_state(grid)))
        assert moments.mass == pytest.approx(1.0, abs=1e-12)
        assert moments.mean_x == pytest.approx(0.3, abs=1e-10)
        assert moments.mean_y == pytest.approx(0.0, abs=1e-10)
        assert moments.var_x == pytest.approx(0.16, abs=1e-10)
        assert moments.var_y == pytest.approx(0.5, abs=1e-8)
        assert moments.cov_xy == pytest.approx(0.0, abs=1e-10)

    def test_boundary_mass(self):
        grid = _make_grid()
        rho = density(_make_state(grid))
        assert boundary_mass(rho, 4 * grid.dx) < 1e-6
        assert boundary_mass(rho, 10.0) == pytest.approx(1.0, abs=1e-12)
        uniform = RealField2D(grid=grid, values=np.full(grid.shape, 1.0 / (grid.lx * grid.ly)))
        assert 0.0 < boundary_mass(uniform, grid.dx) < 1.0

    def test_boundary_band_is_strict_on_every_edge(self):
        # dx = dy = 0.5 are exact, so nodes exactly one width from an edge are ties
        grid = Grid2D(nx=16, ny=16, x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0)
        width = 1.0

        def point_mass(i, j):
            values = np.zeros(grid.shape)
            values[i, j] = 1.0 / (grid.dx * grid.dy)
            return boundary_mass(RealField2D(grid=grid, values=values), width)

        for i in (0, 1, grid.nx - 1):
            assert point_mass(i, 8) == pytest.approx(1.0, abs=1e-12)
            assert point_mass(8, i) == pytest.approx(1.0, abs=1e-12)
        for i in (2, grid.nx - 2):
            assert point_mass(i, 8) == 0.0
            assert point_mass(8, i) == 0.0

    def test_edge_band_uses_the_coarser_spacing(self):
        grid = _make_grid()
        assert edge_band(grid) == pytest.approx(4.0 * max(grid.dx, grid.dy))


class TestErrors:
    def test_projective_error_ignores_global_phase(self):
        grid = _make_grid()
        psi = initial_wavefunction(grid, InitialStateSpec(p0=0.5), 0.1, window_mean(grid, -1.0, 1.0))
        rotated = ComplexField2D(grid=grid, values=np.exp(0.7j) * psi.values)
        assert projective_error(psi, rotated) < 1e-14

    def test_polar_error_ignores_classical_phase_constant(self):
        grid = _make_grid()
        state = _make_state(grid, ky=0.1)
        err = polar_error(state, state.R.values, state.theta_A.values + 2.0, state.theta_B.values, 1e-3)
        assert err < 1e-12
        worse = polar_error(state, 1.01 * state.R.values, state.theta_A.values, state.theta_B.values, 1e-3)
        assert worse == pytest.approx(0.01 * float(np.max(state.R.values)), rel=1e-12)

    def test_fit_slope(self):
        eps = [0.2, 0.1, 0.05]
        slope, residual = fit_slope(eps, [3.0 * e ** 2 for e in eps])
        assert slope == pytest.approx(2.0, abs=1e-12)
        assert residual < 1e-12
        assert fit_slope([0.1], [1.0]) == (None, None)


# ---------------------------------------------------------------------------
# Backreaction
# ---------------------------------------------------------------------------


class TestBackreaction:
    def test_limit_has_no_backreaction_and_hr_does(self):
        grid = _make_grid(64, 64)
        mp = _make_model()
        state0 = _make_state(grid)
        dt, n_steps = 1e-3, 300
        limit = evolve_limit(state0, mp, dt, n_steps, stride=100)
        assert backreaction_residual(limit, mp.U, mp.m1) <= 1e-6

        hydro = evolve_hydro(HydroState.from_polar(state0), HR_GENERATORS, state0.kernel, mp, dt, n_steps, 100)
        assert backreaction_residual(hydro_as_limit(hydro, state0.kernel, dt), mp.U, mp.m1) >= 1e-3

    def test_single_snapshot_is_trivially_closed(self):
        grid = _make_grid()
        state0 = _make_state(grid)
        trivial = evolve_limit(state0, _make_model(), 1e-3, 0)
        assert backreaction_residual(trivial, parse_potential("x^2/2"), 1.0) == 0.0


# ---------------------------------------------------------------------------
# Signalling
# ---------------------------------------------------------------------------


class TestSignalling:
    def _setup(self):
        grid = _make_grid()
        kernel = window_mean(grid, -1.0, 1.0)
        state = HydroState.from_polar(_make_state(grid, kernel, sigma_x=0.5, p0=0.0, correlation=0.4))
        return grid, kernel, state, _make_model("y^2/2")

    def test_cq_does_not_signal_and_hr_does(self):
        _, kernel, state, mp = self._setup()
        region = Region.y_interval(0.0, 6.0)
        cq = signalling_metric("CQ", state, region, kernel, mp, 1e-3, 0.1, 0.3)
        hr = signalling_metric("HR", state, region, kernel, mp, 1e-3, 0.1, 0.3)
        assert cq <= 1e-6
        assert hr >= 1e-5
        assert hr >= 10.0 * cq

    @pytest.mark.parametrize("scheme", ["CQ", "HR"])
    def test_full_domain_measurement_is_silent(self, scheme):
        _, kernel, state, mp = self._setup()
        assert signalling_metric(scheme, state, Region.full(), kernel, mp, 1e-3, 0.05, 0.1) <= 1e-12

    def test_invalid_arguments(self):
        _, kernel, state, mp = self._setup()
        region = Region.y_interval(0.0, 6.0)
        with pytest.raises(StateError):
            signalling_metric("CQ", state, region, kernel, mp, 1e-3, 0.2, 0.1)
        with pytest.raises(StateError):
            signalling_metric("XX", state, region, kernel, mp, 1e-3, 0.0, 0.1)


# ---------------------------------------------------------------------------
# Operator equivalence
# ---------------------------------------------------------------------------


class TestOperatorEquivalence:
    def _state(self, grid, kernel):
        return _make_state(grid, kernel, sigma_y=0.5, ky=0.3, phase_coupling=0.05)

    def _kernels(self, grid):
        return {
            "window": window_mean(grid, -1.0, 1.0),
            "point": point_eval(grid, 0.5),
            "general": general_kernel(grid, lambda y: np.exp(-y ** 2 / 2)),
        }

    @pytest.mark.parametrize("route", ["projected", "lagrangian"])
    def test_identical_kernels(self, route):
        grid = _make_grid()
        window = window_mean(grid, -1.0, 1.0)
        residual = operator_equivalence_residual(
            self._state(grid, window), _make_model(), window, 1e-3, 200, 100, route=route
        )
        assert residual <= 1e-12

    @pytest.mark.parametrize("route", ["projected", "lagrangian"])
    @pytest.mark.parametrize(
        "pair",
        [("window", "point"), ("window", "general"), ("point", "general")],
    )
    def test_kernel_pairs(self, pair, route):
        grid = _make_grid()
        kernels = self._kernels(grid)
        source, target = (kernels[k] for k in pair)
        residual = operator_equivalence_residual(
            self._state(grid, source), _make_model(), target, 1e-3, 200, 100, route=route
        )
        assert residual <= 1e-6

    def test_projected_runs_depend_on_the_kernel(self):
        grid = _make_grid()
        kernels = self._kernels(grid)
        state0 = self._state(grid, kernels["window"])
        mp = _make_model()
        one = evolve_limit_direct(state0, mp, 1e-3, 200, 100, project=True)
        two = evolve_limit_direct(change_kernel(state0, 0.0, kernels["point"]), mp, 1e-3, 200, 100, project=True)
        live = support_mask(one.final.R.values, 1e-3)
        gap = np.abs(one.final.theta_B.values - two.final.theta_B.values)[live]
        assert float(np.max(gap)) >= 1e-2
        assert float(np.max(np.abs(two.final.kernel.row_average(two.final.theta_B.values)))) <= 1e-12
        residual = operator_equivalence_residual(state0, mp, kernels["point"], 1e-3, 200, 100)
        assert residual <= 1e-6

    def test_projection_keeps_amplitude_and_quantum_phase(self):
        grid = _make_grid()
        state0 = self._state(grid, window_mean(grid, -1.0, 1.0))
        mp = _make_model()
        plain = evolve_limit_direct(state0, mp, 1e-3, 200, 100)
        projected = evolve_limit_direct(state0, mp, 1e-3, 200, 100, project=True)
        for a, b in zip(plain.snapshots, projected.snapshots):
            assert np.max(np.abs(a.R.values - b.R.values)) <= 1e-6
            live = support_mask(a.R.values, 1e-3)
            assert np.max(np.abs(a.theta_B.values - b.theta_B.values)[live]) <= 1e-6

    def test_unknown_route(self):
        grid = _make_grid()
        window = window_mean(grid, -1.0, 1.0)
        with pytest.raises(StateError):
            operator_equivalence_residual(self._state(grid, window), _make_model(), window, 1e-3, 10, route="other")


# ---------------------------------------------------------------------------
# Epsilon convergence
# ---------------------------------------------------------------------------


class TestConvergence:
    def test_epsilons_validated(self):
        grid = _make_grid()
        state0 = _make_state(grid)
        with pytest.raises(StateError):
            convergence_study(state0, _make_model(), [0.1, 0.1], 0.1, 1e-3)
        with pytest.raises(StateError):
            convergence_study(state0, _make_model(), [1.5], 0.1, 1e-3)

    @pytest.mark.slow
    def test_slopes_on_reduced_benchmark(self):
        grid = Grid2D(nx=64, ny=64, x_min=-3.0, x_max=3.0, y_min=-6.0, y_max=6.0)
        state0 = _make_state(grid, x0=0.5, p0=0.0)
        report = convergence_study(state0, _make_model(), [0.2, 0.1, 0.05], 0.5, 1e-3, workers=3)
        assert report.epsilons == [0.2, 0.1, 0.05]
        assert 0.8 <= report.slope_zeroth <= 1.2
        assert 1.7 <= report.slope_first <= 2.3
        assert report.residual_zeroth <= 0.1
        assert report.residual_first <= 0.1
