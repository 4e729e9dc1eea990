"""
Subcommand executor.

Each subcommand maps one-to-one onto a solver or diagnostic operation. The
executor loads the config, dispatches, judges the configured checks and
always writes summary.txt; solver failures become a RunResult with
status=error rather than an exception.
"""

import time
import uuid
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from cqlab.config import Experiment, build_experiment, load_config, worker_count
from cqlab.cq_limit import check_caustic, evolve_limit, hamiltonian_flow
from cqlab.diagnostics import (
    backreaction_residual,
    boundary_mass,
    convergence_study,
    density,
    edge_band,
    hydro_as_limit,
    marginal_rho1,
    operator_equivalence_residual,
    signalling_metric,
)
from cqlab.errors import CqlabError, StateError, UnsupportedSubcommand
from cqlab.first_order import CorrectionState, corrected_reconstruct, evolve_correction
from cqlab.full_qm import energy, evolve_full, norm
from cqlab.hybrid_hr import HR_GENERATORS, HydroState, check_flow_commutation, evolve_hydro
from cqlab.logging_utils import (
    log_artifact_written,
    log_error_raised,
    log_run_completed,
    log_run_started,
)
from cqlab.models import CheckResult, RunResult, RunStatus, SummaryValue
from cqlab.numerics import Grid2D, RealField2D
from cqlab.output import (
    ensure_dir,
    plot_convergence,
    plot_density,
    plot_marginals,
    write_csv,
    write_field_csv,
    write_summary,
)
from cqlab.polar import Region, constraint_drift, reconstruct, total_probability

SUMMARY_FILE = "summary.txt"


class RunContext(BaseModel):
    """Per-run options shared by every handler."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    trace_id: str
    out_dir: Path
    plots: bool = False
    timestamps: bool = False
    workers: int = 1


class _Outcome(BaseModel):
    values: dict[str, SummaryValue] = Field(default_factory=dict)
    checks: list[CheckResult] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)


def _at_most(name: str, value: float, bound: float) -> CheckResult:
    return CheckResult(name=name, value=value, bound=f"<= {bound:g}", passed=bool(value <= bound))


def _at_least(name: str, value: float, bound: float) -> CheckResult:
    return CheckResult(name=name, value=value, bound=f">= {bound:g}", passed=bool(value >= bound))


def _within(name: str, value: Optional[float], interval: list[float]) -> CheckResult:
    lo, hi = interval
    ok = value is not None and lo <= value <= hi
    return CheckResult(
        name=name,
        value=float("nan") if value is None else value,
        bound=f"in [{lo:g}, {hi:g}]",
        passed=bool(ok),
    )


class _Writer:
    """Collects artifact names in write order."""

    def __init__(self, ctx: RunContext) -> None:
        self.ctx = ctx
        self.names: list[str] = []

    def _record(self, path: Path, kind: str) -> None:
        self.names.append(path.name)
        log_artifact_written(self.ctx.trace_id, str(path), kind)

    def svg(self, path: Path) -> None:
        self._record(path, "svg")

    def csv(self, name: str, header, rows) -> None:
        self._record(write_csv(self.ctx.out_dir / name, header, rows), "csv")

    def field(self, name: str, exp: Experiment, columns: dict[str, np.ndarray]) -> None:
        self._record(write_field_csv(self.ctx.out_dir / name, exp.grid.x, exp.grid.y, columns), "csv")

    def density_plot(self, name: str, exp: Experiment, rho: np.ndarray, title: str) -> None:
        if self.ctx.plots:
            path = plot_density(self.ctx.out_dir / name, exp.grid.x, exp.grid.y, rho, title, self.ctx.timestamps)
            self._record(path, "svg")

    def marginal_plot(self, name: str, exp: Experiment, curves: dict[str, np.ndarray], title: str) -> None:
        if self.ctx.plots:
            self._record(plot_marginals(self.ctx.out_dir / name, exp.grid.x, curves, title, self.ctx.timestamps), "svg")


def _marginal_rows(times: np.ndarray, x: np.ndarray, rho1: list[np.ndarray], theta_A: list[np.ndarray]):
    for t, r, a in zip(times, rho1, theta_A):
        for xi, ri, ai in zip(x, r, a):
            yield [float(t), float(xi), float(ri), float(ai)]


def _edge_check(grid: Grid2D, rho: np.ndarray, bound: float) -> tuple[float, CheckResult]:
    edge = boundary_mass(RealField2D(grid=grid, values=rho), edge_band(grid))
    return edge, _at_most("boundary_mass", edge, bound)


def _initial_edge_check(exp: Experiment) -> tuple[float, CheckResult]:
    return _edge_check(exp.grid, density(exp.state0).values, exp.config.checks.boundary_mass_max)


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------

def _evolve_full(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver, checks = exp.config.solver, exp.config.checks
    mp = exp.model
    dt = solver.dt_full or solver.dt
    n_steps = int(round(solver.t_final / dt))
    traj = evolve_full(reconstruct(exp.state0, mp.epsilon), mp, dt, n_steps, solver.snapshot_stride)
    w = _Writer(ctx)
    grid = exp.grid
    rows = []
    for t, psi in zip(traj.times, traj.snapshots):
        rows.append([float(t), norm(psi.values, grid), energy(psi, mp)])
    w.csv("full_norm.csv", ["t", "norm", "energy"], rows)
    final = traj.final.values
    rho = np.abs(final) ** 2
    w.field("full_final.csv", exp, {"re": final.real, "im": final.imag, "rho": rho})
    w.density_plot("full_density.svg", exp, rho, f"|psi|^2 at t={traj.times[-1]:g}")
    edge, edge_check = _edge_check(grid, rho, checks.boundary_mass_max)
    energies = [r[2] for r in rows]
    return _Outcome(
        values={
            "epsilon": mp.epsilon,
            "norm_drift": traj.norm_drift,
            "energy_drift": float(max(energies) - min(energies)),
            "boundary_mass": edge,
        },
        checks=[
            _at_most("norm_drift", traj.norm_drift, checks.norm_drift_max),
            edge_check,
        ],
        artifacts=w.names,
    )


def _limit(exp: Experiment):
    solver = exp.config.solver
    return evolve_limit(
        exp.state0,
        exp.model,
        solver.dt,
        exp.n_steps,
        solver.snapshot_stride,
        solver.r_min,
        solver.caustic_tol,
    )


def _evolve_limit(exp: Experiment, ctx: RunContext) -> _Outcome:
    checks = exp.config.checks
    sol = _limit(exp)
    w = _Writer(ctx)
    rho1 = [marginal_rho1(density(s)).values for s in sol.snapshots]
    w.csv(
        "limit_marginals.csv",
        ["t", "x", "rho1", "theta_A"],
        _marginal_rows(sol.times, exp.grid.x, rho1, [s.theta_A.values for s in sol.snapshots]),
    )
    final = sol.final
    w.field("limit_final.csv", exp, {"R": final.R.values, "theta_B": final.theta_B.values})
    w.density_plot("limit_density.svg", exp, final.R.values ** 2, f"limit rho at t={sol.times[-1]:g}")
    w.marginal_plot("limit_marginals.svg", exp, {"t=0": rho1[0], f"t={sol.times[-1]:g}": rho1[-1]}, "rho1")
    p0 = total_probability(sol.snapshots[0])
    probability_drift = max(abs(total_probability(s) - p0) for s in sol.snapshots)
    drift = max(constraint_drift(s) for s in sol.snapshots)
    edge, edge_check = _edge_check(exp.grid, density(final).values, checks.boundary_mass_max)
    return _Outcome(
        values={
            "caustic_time": "none" if sol.caustic_time is None else sol.caustic_time,
            "total_probability": total_probability(final),
            "probability_drift": probability_drift,
            "constraint_drift": drift,
            "boundary_mass": edge,
        },
        checks=[
            _at_most("probability_drift", probability_drift, checks.probability_drift_max),
            _at_most("constraint_drift", drift, checks.constraint_drift_max),
            edge_check,
        ],
        artifacts=w.names,
    )


def _evolve_corrected(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver, checks = exp.config.solver, exp.config.checks
    sol = _limit(exp)
    traj = evolve_correction(
        sol,
        CorrectionState.zero(exp.grid, exp.kernel),
        exp.model,
        exp.kernel,
        solver.dt,
        exp.n_steps,
        solver.snapshot_stride,
        solver.r_min,
    )
    corr = traj.corrections[-1]
    psi = corrected_reconstruct(sol.final, corr, exp.model.epsilon, solver.r_min).values
    w = _Writer(ctx)
    w.field("correction_final.csv", exp, {"mu": corr.mu.values, "omega": corr.omega.values})
    w.csv("correction_nu.csv", ["x", "nu"], zip(exp.grid.x.tolist(), corr.nu.values.tolist()))
    w.field("corrected_final.csv", exp, {"re": psi.real, "im": psi.imag})
    edge, edge_check = _edge_check(exp.grid, np.abs(psi) ** 2, checks.boundary_mass_max)
    values: dict[str, SummaryValue] = {
        "epsilon": exp.model.epsilon,
        "constraint_drift": traj.constraint_drift,
        "boundary_mass": edge,
    }
    result_checks = [_at_most("constraint_drift", traj.constraint_drift, checks.constraint_drift_max)]
    if traj.zeroth_mismatch is not None:
        values["zeroth_mismatch"] = traj.zeroth_mismatch
        result_checks.append(_at_most("zeroth_mismatch", traj.zeroth_mismatch, checks.zeroth_mismatch_max))
    result_checks.append(edge_check)
    return _Outcome(values=values, checks=result_checks, artifacts=w.names)


def _evolve_hr(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver, checks = exp.config.solver, exp.config.checks
    state0 = HydroState.from_polar(exp.state0)
    traj = evolve_hydro(
        state0, HR_GENERATORS, exp.kernel, exp.model, solver.dt, exp.n_steps, solver.snapshot_stride, solver.r_min
    )
    report = check_flow_commutation(
        state0, exp.kernel, exp.model, exp.config.commutation.t, exp.config.commutation.s, solver.dt, solver.r_min
    )
    w = _Writer(ctx)
    rho1 = [marginal_rho1(s.rho).values for s in traj.snapshots]
    theta_A = [exp.kernel.row_average(s.theta.values) for s in traj.snapshots]
    w.csv("hr_marginals.csv", ["t", "x", "rho1", "theta_A"], _marginal_rows(traj.times, exp.grid.x, rho1, theta_A))
    final = traj.final
    w.field("hr_final.csv", exp, {"rho": final.rho.values, "theta": final.theta.values})
    w.density_plot("hr_density.svg", exp, final.rho.values, f"HR rho at t={traj.times[-1]:g}")
    edge, edge_check = _initial_edge_check(exp)
    return _Outcome(
        values={
            "mass_drift": traj.mass_drift,
            "commutator": report.commutator,
            "splitting_defect": report.splitting_defect,
            "hr_commutator": report.hr_commutator,
            "boundary_mass": edge,
        },
        checks=[_at_most("commutator", report.commutator, checks.commutator_max), edge_check],
        artifacts=w.names,
    )


def _convergence(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver, checks = exp.config.solver, exp.config.checks
    report = convergence_study(
        exp.state0,
        exp.model,
        exp.config.convergence.epsilons,
        solver.t_final,
        solver.dt,
        solver.dt_full,
        solver.r_min,
        solver.caustic_tol,
        solver.support_fraction,
        ctx.workers,
    )
    w = _Writer(ctx)
    w.csv(
        "convergence.csv",
        ["eps", "err0", "err1", "psi_err0", "psi_err1"],
        zip(report.epsilons, report.errors_zeroth, report.errors_first, report.psi_errors_zeroth, report.psi_errors_first),
    )
    if ctx.plots:
        path = plot_convergence(
            ctx.out_dir / "convergence.svg",
            report.epsilons,
            {
                "zeroth order": (report.errors_zeroth, report.slope_zeroth),
                "first order": (report.errors_first, report.slope_first),
            },
            ctx.timestamps,
        )
        w.svg(path)
    edge, edge_check = _initial_edge_check(exp)
    values: dict[str, SummaryValue] = {"boundary_mass": edge}
    for key in ("slope_zeroth", "slope_first", "residual_zeroth", "residual_first"):
        value = getattr(report, key)
        values[key] = "none" if value is None else value
    result_checks = [
        _within("slope_zeroth", report.slope_zeroth, checks.slope_zeroth),
        _within("slope_first", report.slope_first, checks.slope_first),
    ]
    for key in ("residual_zeroth", "residual_first"):
        value = getattr(report, key)
        if value is not None:
            result_checks.append(_at_most(f"fit_{key}", value, checks.fit_residual_max))
    result_checks.append(edge_check)
    return _Outcome(values=values, checks=result_checks, artifacts=w.names)


def _signalling(exp: Experiment, ctx: RunContext) -> _Outcome:
    m = exp.config.measurement
    if m is None:
        raise StateError("signalling needs a [measurement] section", location="measurement")
    solver, checks = exp.config.solver, exp.config.checks
    state0 = HydroState.from_polar(exp.state0)

    def metric(scheme: str, region: Region, renormalize: bool) -> float:
        return signalling_metric(
            scheme,
            state0,
            region,
            exp.kernel,
            exp.model,
            solver.dt,
            m.t_meas,
            solver.t_final,
            renormalize,
            m.edge_width,
            solver.r_min,
        )

    region = exp.measurement_region()
    rows = []
    metrics: dict[tuple[str, bool], float] = {}
    for scheme in ("CQ", "HR"):
        for renormalize in (m.renormalize, not m.renormalize):
            value = metric(scheme, region, renormalize)
            metrics[(scheme, renormalize)] = value
            rows.append([scheme, "true" if renormalize else "false", "omega", value])
    # measuring over the whole domain must leave every marginal alone
    full = {scheme: metric(scheme, Region.full(), m.renormalize) for scheme in ("CQ", "HR")}
    for scheme, value in full.items():
        rows.append([scheme, "true" if m.renormalize else "false", "full", value])
    w = _Writer(ctx)
    w.csv("signalling.csv", ["scheme", "renormalize", "region", "metric"], rows)
    cq = metrics[("CQ", m.renormalize)]
    hr = metrics[("HR", m.renormalize)]
    ratio = hr / cq if cq > 0.0 else float("inf")
    full_worst = max(full.values())
    edge, edge_check = _initial_edge_check(exp)
    return _Outcome(
        values={
            "signalling_cq": cq,
            "signalling_hr": hr,
            "signalling_ratio": ratio,
            "signalling_cq_alt": metrics[("CQ", not m.renormalize)],
            "signalling_hr_alt": metrics[("HR", not m.renormalize)],
            "signalling_full_cq": full["CQ"],
            "signalling_full_hr": full["HR"],
            "boundary_mass": edge,
        },
        checks=[
            _at_most("signalling_cq", cq, checks.signalling_cq_max),
            _at_least("signalling_ratio", ratio, checks.signalling_ratio_min),
            _at_most("signalling_full", full_worst, checks.signalling_full_max),
            edge_check,
        ],
        artifacts=w.names,
    )


def _backreaction(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver, checks = exp.config.solver, exp.config.checks
    mp = exp.model
    limit_residual = backreaction_residual(_limit(exp), mp.U, mp.m1, solver.caustic_tol)
    hydro = evolve_hydro(
        HydroState.from_polar(exp.state0),
        HR_GENERATORS,
        exp.kernel,
        mp,
        solver.dt,
        exp.n_steps,
        solver.snapshot_stride,
        solver.r_min,
    )
    hr_residual = backreaction_residual(hydro_as_limit(hydro, exp.kernel, solver.dt), mp.U, mp.m1, solver.caustic_tol)
    w = _Writer(ctx)
    w.csv("backreaction.csv", ["scheme", "residual"], [["CQ", limit_residual], ["HR", hr_residual]])
    edge, edge_check = _initial_edge_check(exp)
    return _Outcome(
        values={"backreaction_cq": limit_residual, "backreaction_hr": hr_residual, "boundary_mass": edge},
        checks=[
            _at_most("backreaction", limit_residual, checks.backreaction_max),
            _at_least("backreaction_hr", hr_residual, checks.backreaction_hr_min),
            edge_check,
        ],
        artifacts=w.names,
    )


def _operator_check(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver = exp.config.solver
    kernel_to = exp.kernel_alt or exp.kernel
    residuals = {
        route: operator_equivalence_residual(
            exp.state0,
            exp.model,
            kernel_to,
            solver.dt,
            exp.n_steps,
            solver.snapshot_stride,
            solver.r_min,
            solver.caustic_tol,
            route=route,
        )
        for route in ("projected", "lagrangian")
    }
    w = _Writer(ctx)
    w.csv(
        "operator_check.csv",
        ["kernel_from", "kernel_to", "route", "residual"],
        [[exp.kernel.describe(), kernel_to.describe(), route, value] for route, value in residuals.items()],
    )
    edge, edge_check = _initial_edge_check(exp)
    return _Outcome(
        values={
            "equivalence_residual": residuals["projected"],
            "equivalence_residual_lagrangian": residuals["lagrangian"],
            "boundary_mass": edge,
        },
        checks=[
            _at_most("equivalence", residuals["projected"], exp.config.checks.equivalence_max),
            edge_check,
        ],
        artifacts=w.names,
    )


def _caustic_scan(exp: Experiment, ctx: RunContext) -> _Outcome:
    solver = exp.config.solver
    grid = exp.grid
    t_grid = solver.dt * np.arange(exp.n_steps + 1)
    flow = hamiltonian_flow(exp.model.U, exp.state0.theta_A, exp.model.m1, t_grid, box=(grid.x_min, grid.x_max))
    caustic = check_caustic(flow, solver.caustic_tol)
    stride = solver.snapshot_stride
    mins = flow.dF.min(axis=1)
    w = _Writer(ctx)
    w.csv("caustic.csv", ["t", "min_dF"], ([float(t_grid[k]), float(mins[k])] for k in range(0, t_grid.size, stride)))
    edge, edge_check = _initial_edge_check(exp)
    return _Outcome(
        values={
            "caustic_time": "none" if caustic is None else caustic,
            "min_dF": float(mins.min()),
            "boundary_mass": edge,
        },
        artifacts=w.names,
        checks=[edge_check],
    )


HANDLERS: dict[str, Callable[[Experiment, RunContext], _Outcome]] = {
    "evolve-full": _evolve_full,
    "evolve-limit": _evolve_limit,
    "evolve-corrected": _evolve_corrected,
    "evolve-hr": _evolve_hr,
    "convergence": _convergence,
    "signalling": _signalling,
    "backreaction": _backreaction,
    "operator-check": _operator_check,
    "caustic-scan": _caustic_scan,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def run_subcommand(
    name: str,
    config_path: Path,
    out_dir: Path,
    plots: bool = False,
    timestamps: bool = False,
    workers: Optional[int] = None,
) -> RunResult:
    """
    Execute one subcommand and write its artifacts plus summary.txt.

    Returns:
        RunResult with status success, failed_checks or error
    """
    start_time = time.perf_counter()
    trace_id = str(uuid.uuid4())
    log_run_started(trace_id, name, str(config_path))
    ctx = RunContext(
        trace_id=trace_id,
        out_dir=Path(out_dir),
        plots=plots,
        timestamps=timestamps,
        workers=worker_count(workers),
    )

    try:
        ensure_dir(ctx.out_dir)
        handler = HANDLERS.get(name)
        if handler is None:
            raise UnsupportedSubcommand(
                f"Unsupported subcommand: {name} (expected one of {', '.join(HANDLERS)})"
            )
        experiment = build_experiment(load_config(config_path, trace_id))
        outcome = handler(experiment, ctx)
    except CqlabError as exc:
        detail = exc.to_detail(trace_id)
        log_error_raised(trace_id, name, detail.code.value, detail.name, detail.message)
        result = RunResult(subcommand=name, trace_id=trace_id, status=RunStatus.ERROR, error=detail)
    else:
        passed = all(c.passed for c in outcome.checks)
        result = RunResult(
            subcommand=name,
            trace_id=trace_id,
            status=RunStatus.SUCCESS if passed else RunStatus.FAILED_CHECKS,
            values=outcome.values,
            checks=outcome.checks,
            artifacts=outcome.artifacts,
        )

    if ctx.out_dir.is_dir():
        write_summary(ctx.out_dir / SUMMARY_FILE, result)
    execution_time_ms = int((time.perf_counter() - start_time) * 1000)
    log_run_completed(trace_id, name, result.status.value, execution_time_ms)
    return result
