"""
Semantic checks on an experiment file.

Runs after schema validation and before any solver is built. Every check is a
pure function of the parsed config returning a (possibly empty) list of
ErrorDetail; check_config collects all of them so a user sees every problem
in one pass.
"""

import math
from typing import Callable, Optional

from cqlab.errors import CqlabError
from cqlab.expr import PotentialExpr, parse_potential
from cqlab.models import (
    ErrorCode,
    ErrorDetail,
    ExperimentConfig,
    GridSpec,
    KernelSpec,
)

Check = Callable[[ExperimentConfig, str], list[ErrorDetail]]


def _error(trace_id: str, location: str, message: str, code: ErrorCode = ErrorCode.E_CFG_002) -> ErrorDetail:
    return ErrorDetail(
        code=code,
        name="ConfigValidation",
        message=f"{location}: {message}",
        recoverable=True,
        trace_id=trace_id,
        location=location,
    )


def _parse(text: str, location: str, trace_id: str, errors: list[ErrorDetail]) -> Optional[PotentialExpr]:
    try:
        return parse_potential(text)
    except CqlabError as exc:
        errors.append(
            ErrorDetail(
                code=exc.code,
                name=type(exc).__name__,
                message=f"{location}: {exc.message}",
                recoverable=True,
                trace_id=trace_id,
                location=location,
            )
        )
        return None


def _check_grid(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    g = config.grid
    errors = []
    for name in ("nx", "ny"):
        if getattr(g, name) < 8:
            errors.append(_error(trace_id, f"grid.{name}", "must be at least 8"))
    if not g.x_max > g.x_min:
        errors.append(_error(trace_id, "grid.x_max", "must exceed grid.x_min"))
    if not g.y_max > g.y_min:
        errors.append(_error(trace_id, "grid.y_max", "must exceed grid.y_min"))
    return errors


def _check_model(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    errors: list[ErrorDetail] = []
    if (config.model is None) == (config.dimensional is None):
        return [_error(trace_id, "model", "exactly one of [model] and [dimensional] is required")]
    if config.model is not None:
        m = config.model
        section = "model"
        for name in ("m1", "m2"):
            if not getattr(m, name) > 0.0:
                errors.append(_error(trace_id, f"model.{name}", "must be positive"))
        if not 0.0 < m.epsilon <= 1.0:
            errors.append(_error(trace_id, "model.epsilon", "must lie in (0, 1]"))
        u_text, v_text = m.U, m.V
    else:
        d = config.dimensional
        section = "dimensional"
        for name in ("M1", "M2", "L1", "L2", "T", "hbar"):
            if not getattr(d, name) > 0.0:
                errors.append(_error(trace_id, f"dimensional.{name}", "must be positive"))
        if d.M2 > d.M1:
            errors.append(_error(trace_id, "dimensional.M2", "must not exceed M1"))
        u_text, v_text = d.U, d.V
    U = _parse(u_text, f"{section}.U", trace_id, errors)
    _parse(v_text, f"{section}.V", trace_id, errors)
    if U is not None and U.references("y"):
        errors.append(_error(trace_id, f"{section}.U", "U must not reference y"))
    return errors


def _check_kernel_spec(spec: KernelSpec, grid: GridSpec, location: str, trace_id: str) -> list[ErrorDetail]:
    errors: list[ErrorDetail] = []
    if spec.type == "window":
        if spec.a is None or spec.b is None:
            return [_error(trace_id, location, "window kernel needs a and b")]
        if not spec.a < spec.b:
            errors.append(_error(trace_id, f"{location}.b", "window needs a < b"))
        if spec.a < grid.y_min or spec.b > grid.y_max:
            errors.append(
                _error(
                    trace_id,
                    location,
                    f"window [{spec.a:g}, {spec.b:g}] lies outside the y-domain "
                    f"[{grid.y_min:g}, {grid.y_max:g}]",
                    ErrorCode.E_KER_001,
                )
            )
    elif spec.type == "point":
        if spec.a is None:
            return [_error(trace_id, location, "point kernel needs a")]
        if not grid.y_min <= spec.a <= grid.y_max:
            errors.append(
                _error(trace_id, f"{location}.a", "evaluation point lies outside the y-domain", ErrorCode.E_KER_001)
            )
    else:
        if spec.alpha is None:
            return [_error(trace_id, location, "general kernel needs alpha")]
        alpha = _parse(spec.alpha, f"{location}.alpha", trace_id, errors)
        if alpha is not None and alpha.references("x"):
            errors.append(_error(trace_id, f"{location}.alpha", "alpha must be a function of y only"))
    return errors


def _check_kernels(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    errors = _check_kernel_spec(config.kernel, config.grid, "kernel", trace_id)
    if config.kernel_alt is not None:
        errors += _check_kernel_spec(config.kernel_alt, config.grid, "kernel_alt", trace_id)
    return errors


def _check_initial(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    s = config.initial
    errors = []
    for name in ("sigma_x", "sigma_y"):
        if not getattr(s, name) > 0.0:
            errors.append(_error(trace_id, f"initial.{name}", "must be positive"))
    if not errors and s.correlation ** 2 >= 1.0 / (4.0 * s.sigma_x ** 2 * s.sigma_y ** 2):
        errors.append(_error(trace_id, "initial.correlation", "too strong for the widths; amplitude is unbounded"))
    return errors


def _check_solver(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    s = config.solver
    errors = []
    if not s.dt > 0.0:
        errors.append(_error(trace_id, "solver.dt", "must be positive"))
    if s.dt_full is not None and not s.dt_full > 0.0:
        errors.append(_error(trace_id, "solver.dt_full", "must be positive"))
    if not (s.t_final >= 0.0 and math.isfinite(s.t_final)):
        errors.append(_error(trace_id, "solver.t_final", "must be finite and nonnegative"))
    if s.snapshot_stride < 1:
        errors.append(_error(trace_id, "solver.snapshot_stride", "must be at least 1"))
    if not s.r_min > 0.0:
        errors.append(_error(trace_id, "solver.r_min", "must be positive"))
    if not s.caustic_tol > 0.0:
        errors.append(_error(trace_id, "solver.caustic_tol", "must be positive"))
    if not 0.0 < s.support_fraction < 1.0:
        errors.append(_error(trace_id, "solver.support_fraction", "must lie in (0, 1)"))
    return errors


def _check_convergence(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    eps = config.convergence.epsilons
    errors = []
    if not eps:
        errors.append(_error(trace_id, "convergence.epsilons", "must not be empty"))
    if any(not 0.0 < e <= 1.0 for e in eps):
        errors.append(_error(trace_id, "convergence.epsilons", "every value must lie in (0, 1]"))
    if len(set(eps)) != len(eps):
        errors.append(_error(trace_id, "convergence.epsilons", "values must be distinct"))
    return errors


def _check_interval(values: Optional[list[float]], location: str, trace_id: str) -> list[ErrorDetail]:
    if values is None:
        return []
    if len(values) != 2 or not values[0] < values[1]:
        return [_error(trace_id, location, "must be an interval [a, b] with a < b")]
    return []


def _check_measurement(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    m = config.measurement
    if m is None:
        return []
    errors = _check_interval(m.omega_y, "measurement.omega_y", trace_id)
    errors += _check_interval(m.omega_x, "measurement.omega_x", trace_id)
    if not 0.0 <= m.t_meas <= config.solver.t_final:
        errors.append(_error(trace_id, "measurement.t_meas", "must lie in [0, solver.t_final]"))
    if m.edge_width < 0.0:
        errors.append(_error(trace_id, "measurement.edge_width", "must be nonnegative"))
    return errors


def _check_commutation(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    c = config.commutation
    return [
        _error(trace_id, f"commutation.{name}", "must be nonnegative")
        for name in ("t", "s")
        if getattr(c, name) < 0.0
    ]


def _check_checks(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    c = config.checks
    errors = []
    for name in ("slope_zeroth", "slope_first"):
        errors += _check_interval(getattr(c, name), f"checks.{name}", trace_id)
    return errors


_CHECKS: tuple[Check, ...] = (
    _check_grid,
    _check_model,
    _check_kernels,
    _check_initial,
    _check_solver,
    _check_convergence,
    _check_measurement,
    _check_commutation,
    _check_checks,
)


def check_config(config: ExperimentConfig, trace_id: str) -> list[ErrorDetail]:
    """
    Run every semantic check and return all violations.

    Pure: no I/O, deterministic for a given config.
    """
    errors: list[ErrorDetail] = []
    for check in _CHECKS:
        errors.extend(check(config, trace_id))
    return errors
