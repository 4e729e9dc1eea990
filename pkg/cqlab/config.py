"""
Experiment files: loading, validation and assembly into solver inputs.

Files are TOML with one table per section ([grid], [model], [kernel], ...).
load_config collects every schema and semantic error before giving up.
"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from cqlab.constraint_engine import check_config
from cqlab.errors import ConfigError, ConfigUnreadable
from cqlab.expr import parse_potential
from cqlab.full_qm import DimensionalParams, ModelParams, nondimensionalize
from cqlab.logging_utils import log_config_rejected
from cqlab.models import ErrorCode, ErrorDetail, ExperimentConfig, KernelSpec
from cqlab.numerics import Grid2D
from cqlab.operators import AveragingKernel, general_kernel, point_eval, window_mean
from cqlab.polar import PolarState, Region, Rectangle
from cqlab.states import gaussian_polar_state

DEFAULT_WORKERS = 1


def worker_count(override: Optional[int] = None) -> int:
    """Concurrency for independent runs: CLI flag, then CQLAB_WORKERS, then 1."""
    if override is not None:
        return max(1, override)
    raw = os.environ.get("CQLAB_WORKERS")
    try:
        return max(1, int(raw)) if raw else DEFAULT_WORKERS
    except ValueError:
        return DEFAULT_WORKERS


def _schema_errors(exc: ValidationError, trace_id: str) -> list[ErrorDetail]:
    out = []
    for err in exc.errors():
        location = ".".join(str(part) for part in err["loc"]) or "<root>"
        out.append(
            ErrorDetail(
                code=ErrorCode.E_CFG_002,
                name="ConfigValidation",
                message=f"{location}: {err['msg']}",
                recoverable=True,
                trace_id=trace_id,
                location=location,
            )
        )
    return out


def load_config(path: Union[str, Path], trace_id: str = "") -> ExperimentConfig:
    """
    Read and validate an experiment file.

    Raises:
        ConfigUnreadable: file missing or not valid TOML
        ConfigError: schema or semantic violations (all of them)
    """
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigUnreadable(f"cannot read {path}: {exc.strerror or exc}", location=str(path)) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigUnreadable(f"{path} is not valid TOML: {exc}", location=str(path)) from exc

    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        errors = _schema_errors(exc, trace_id)
    else:
        errors = check_config(config, trace_id)

    if errors:
        for e in errors:
            log_config_rejected(trace_id or None, str(path), e.code.value, e.location, e.message)
        raise ConfigError(errors)
    return config


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

class Experiment(BaseModel):
    """
    Solver inputs built from a validated config.

    Attributes:
        config: The validated file
        grid: Computational grid
        model: Dimensionless model (epsilon from [model], or from the mass ratio)
        kernel: Primary averaging operator
        kernel_alt: Second operator for the equivalence check, if configured
        state0: Epsilon-independent polar initial data under kernel
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True, extra="forbid")

    config: ExperimentConfig
    grid: Grid2D
    model: ModelParams
    kernel: AveragingKernel
    kernel_alt: Optional[AveragingKernel] = None
    state0: PolarState

    @property
    def n_steps(self) -> int:
        solver = self.config.solver
        return int(round(solver.t_final / solver.dt))

    def measurement_region(self) -> Region:
        m = self.config.measurement
        if m is None:
            return Region.full()
        rect = Rectangle(y_min=m.omega_y[0], y_max=m.omega_y[1])
        if m.omega_x is not None:
            rect = rect.model_copy(update={"x_min": m.omega_x[0], "x_max": m.omega_x[1]})
        return Region(rectangles=[rect])


def build_model(config: ExperimentConfig) -> ModelParams:
    if config.model is not None:
        m = config.model
        return ModelParams(
            m1=m.m1,
            m2=m.m2,
            epsilon=m.epsilon,
            U=parse_potential(m.U),
            V=parse_potential(m.V),
        )
    d = config.dimensional
    return nondimensionalize(
        DimensionalParams(
            M1=d.M1,
            M2=d.M2,
            L1=d.L1,
            L2=d.L2,
            T_scale=d.T,
            hbar=d.hbar,
            U_dim=parse_potential(d.U),
            V_dim=parse_potential(d.V),
        )
    )


def build_kernel(spec: KernelSpec, grid: Grid2D) -> AveragingKernel:
    if spec.type == "window":
        return window_mean(grid, spec.a, spec.b)
    if spec.type == "point":
        return point_eval(grid, spec.a)
    alpha = parse_potential(spec.alpha)
    return general_kernel(grid, lambda y: alpha.evaluate(0.0, y))


def build_experiment(config: ExperimentConfig) -> Experiment:
    grid = Grid2D(**config.grid.model_dump())
    kernel = build_kernel(config.kernel, grid)
    return Experiment(
        config=config,
        grid=grid,
        model=build_model(config),
        kernel=kernel,
        kernel_alt=build_kernel(config.kernel_alt, grid) if config.kernel_alt else None,
        state0=gaussian_polar_state(grid, config.initial, kernel),
    )
