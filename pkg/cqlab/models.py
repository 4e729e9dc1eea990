"""
Data models for cqlab.

ErrorCode / ErrorDetail: structured error information
ExperimentConfig: validated experiment file (one section model per config section)
RunResult: outcome of one subcommand, rendered into the summary file
"""

from enum import Enum
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class RunStatus(str, Enum):
    """Run status values."""
    SUCCESS = "success"
    FAILED_CHECKS = "failed_checks"
    ERROR = "error"


class ErrorCode(str, Enum):
    """cqlab error codes."""
    E_CFG_001 = "E-CFG-001"  # ConfigUnreadable
    E_CFG_002 = "E-CFG-002"  # ConfigValidation
    E_EXPR_001 = "E-EXPR-001"  # ExpressionSyntaxError
    E_EXPR_002 = "E-EXPR-002"  # UnknownIdentifier
    E_EXPR_003 = "E-EXPR-003"  # ArityMismatch
    E_EXPR_004 = "E-EXPR-004"  # ExpressionEvaluationError
    E_GRID_001 = "E-GRID-001"  # GridError
    E_GRID_002 = "E-GRID-002"  # MonotonicityError
    E_KER_001 = "E-KER-001"  # KernelError
    E_POL_001 = "E-POL-001"  # NodeDetected
    E_POL_002 = "E-POL-002"  # WindingDetected
    E_POL_003 = "E-POL-003"  # RegionError
    E_NUM_001 = "E-NUM-001"  # BlowUpDetected
    E_NUM_002 = "E-NUM-002"  # AmplitudeFloorBreached
    E_NUM_003 = "E-NUM-003"  # StateError
    E_FLOW_001 = "E-FLOW-001"  # CausticFormed
    E_FLOW_002 = "E-FLOW-002"  # FlowEscape
    E_COR_001 = "E-COR-001"  # CorrectedAmplitudeError
    E_RUN_001 = "E-RUN-001"  # UnsupportedSubcommand
    E_RUN_002 = "E-RUN-002"  # OutputError


class ErrorDetail(BaseModel):
    """
    Structured error information.

    Attributes:
        code: Error code (E-CFG-001, E-POL-001, etc.)
        name: Exception name (NodeDetected, CausticFormed, ...)
        message: Human-readable error message
        recoverable: Whether a changed configuration might succeed
        trace_id: Run trace identifier
        location: Config key or field position the error refers to, if any
    """
    model_config = ConfigDict(extra="forbid")

    code: ErrorCode = Field(..., description="Error code")
    name: str = Field(..., description="Exception name")
    message: str = Field(..., description="Human-readable error message")
    recoverable: bool = Field(..., description="Whether a changed configuration might succeed")
    trace_id: str = Field(..., description="Run trace identifier (UUID)")
    location: Optional[str] = Field(None, description="Config key or position")


# ---------------------------------------------------------------------------
# Experiment configuration sections
# ---------------------------------------------------------------------------

class GridSpec(BaseModel):
    """
    Uniform tensor grid over (x, y).

    Attributes:
        nx, ny: Node counts (>= 8)
        x_min, x_max, y_min, y_max: Box bounds
        periodic_x, periodic_y: Periodicity flags
    """
    model_config = ConfigDict(extra="forbid")

    nx: int = Field(..., description="Node count along x")
    ny: int = Field(..., description="Node count along y")
    x_min: float = Field(..., description="Lower x bound")
    x_max: float = Field(..., description="Upper x bound")
    y_min: float = Field(..., description="Lower y bound")
    y_max: float = Field(..., description="Upper y bound")
    periodic_x: bool = Field(True, description="Periodic along x")
    periodic_y: bool = Field(True, description="Periodic along y")


class ModelSpec(BaseModel):
    """Dimensionless model parameters with potentials as expression strings."""
    model_config = ConfigDict(extra="forbid")

    m1: float = Field(1.0, description="Dimensionless classical mass")
    m2: float = Field(1.0, description="Dimensionless quantum mass")
    epsilon: float = Field(0.1, description="Mass-ratio parameter")
    U: str = Field("0", description="Potential of x")
    V: str = Field("0", description="Potential of (x, y)")


class DimensionalSpec(BaseModel):
    """
    Dimensional parameters, converted by nondimensionalize.

    Attributes:
        M1, M2: Masses (M2 <= M1)
        L1, L2: Length scales
        T: Time scale
        hbar: Action scale
        U, V: Dimensional potentials as expression strings
    """
    model_config = ConfigDict(extra="forbid")

    M1: float
    M2: float
    L1: float
    L2: float
    T: float
    hbar: float
    U: str = "0"
    V: str = "0"


class KernelSpec(BaseModel):
    """Averaging operator: window {a, b}, general kernel {alpha} or point {a}."""
    model_config = ConfigDict(extra="forbid")

    type: Literal["window", "kernel", "point"] = Field(..., description="Kernel variant")
    a: Optional[float] = Field(None, description="Window start or evaluation point")
    b: Optional[float] = Field(None, description="Window end")
    alpha: Optional[str] = Field(None, description="Weight expression in y")


class InitialStateSpec(BaseModel):
    """
    Gaussian family of epsilon-independent polar initial data.

    Attributes:
        x0, y0: Centers
        sigma_x, sigma_y: Density standard deviations
        p0: Classical momentum
        focusing: Curvature c of theta_A0 = p0 (x - x0) - c (x - x0)^2 / 2 (c > 0 focuses)
        ky: Quantum wave number, theta_B0 = B(ky y + kappa x y)
        correlation: Amplitude coupling gamma in exp(-gamma (x - x0)(y - y0))
        phase_coupling: kappa
    """
    model_config = ConfigDict(extra="forbid")

    family: Literal["gaussian"] = "gaussian"
    x0: float = 0.0
    y0: float = 0.0
    sigma_x: float = 0.5
    sigma_y: float = 0.7071067811865476
    p0: float = 0.0
    focusing: float = 0.0
    ky: float = 0.0
    correlation: float = 0.0
    phase_coupling: float = 0.0


class SolverSpec(BaseModel):
    """Time stepping and tolerances."""
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(..., description="Time step of limit, correction and hydro steppers")
    t_final: float = Field(..., description="Final time")
    dt_full: Optional[float] = Field(None, description="Time step of the full solver (defaults to dt)")
    snapshot_stride: int = Field(100, description="Steps between stored snapshots")
    r_min: float = Field(1e-8, description="Amplitude floor")
    caustic_tol: float = Field(1e-3, description="Caustic tolerance on dF")
    support_fraction: float = Field(1e-3, description="Relative amplitude defining the support")


class ConvergenceSpec(BaseModel):
    """Epsilon sweep."""
    model_config = ConfigDict(extra="forbid")

    epsilons: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])


class MeasurementSpec(BaseModel):
    """Position measurement on the quantum side."""
    model_config = ConfigDict(extra="forbid")

    omega_y: list[float] = Field(..., description="Measured y-interval [a, b]")
    omega_x: Optional[list[float]] = Field(None, description="Optional x-interval")
    t_meas: float = Field(..., description="Measurement time")
    renormalize: bool = Field(False, description="Rescale outcome branches to unit mass")
    edge_width: float = Field(0.5, description="Edge width of the smoothed indicator (0 = sharp)")


class CommutationSpec(BaseModel):
    """Flow commutation check."""
    model_config = ConfigDict(extra="forbid")

    t: float = 0.1
    s: float = 0.1


class ChecksSpec(BaseModel):
    """Tolerances judged into pass/fail lines of the summary."""
    model_config = ConfigDict(extra="forbid")

    slope_zeroth: list[float] = Field(default_factory=lambda: [0.8, 1.2])
    slope_first: list[float] = Field(default_factory=lambda: [1.7, 2.3])
    fit_residual_max: float = 0.1
    equivalence_max: float = 1e-6
    backreaction_max: float = 1e-6
    backreaction_hr_min: float = 1e-3
    signalling_cq_max: float = 1e-6
    signalling_full_max: float = 1e-12
    signalling_ratio_min: float = 10.0
    commutator_max: float = 1e-4
    norm_drift_max: float = 1e-8
    probability_drift_max: float = 1e-8
    constraint_drift_max: float = 1e-9
    zeroth_mismatch_max: float = 1e-3
    boundary_mass_max: float = 1e-12


class ExperimentConfig(BaseModel):
    """
    A validated experiment file.

    Exactly one of model / dimensional must be present.
    """
    model_config = ConfigDict(extra="forbid")

    grid: GridSpec
    model: Optional[ModelSpec] = None
    dimensional: Optional[DimensionalSpec] = None
    kernel: KernelSpec
    kernel_alt: Optional[KernelSpec] = None
    initial: InitialStateSpec = Field(default_factory=InitialStateSpec)
    solver: SolverSpec
    convergence: ConvergenceSpec = Field(default_factory=ConvergenceSpec)
    measurement: Optional[MeasurementSpec] = None
    commutation: CommutationSpec = Field(default_factory=CommutationSpec)
    checks: ChecksSpec = Field(default_factory=ChecksSpec)


# ---------------------------------------------------------------------------
# Run outcome
# ---------------------------------------------------------------------------

SummaryValue = Union[bool, int, float, str]


class CheckResult(BaseModel):
    """
    One judged check.

    Attributes:
        name: Check name (e.g. "slope_zeroth")
        value: Measured value
        bound: Human-readable bound ("<= 1e-06", "in [0.8, 1.2]")
        passed: Whether the value satisfies the bound
    """
    model_config = ConfigDict(extra="forbid")

    name: str
    value: float
    bound: str
    passed: bool


class RunResult(BaseModel):
    """
    Outcome of one subcommand.

    Attributes:
        subcommand: Subcommand name
        trace_id: Run trace identifier
        status: success, failed_checks or error
        values: Measured quantities for the summary
        checks: Judged checks
        artifacts: Written file names, relative to the output directory
        error: Structured error if the run failed
    """
    model_config = ConfigDict(extra="forbid")

    subcommand: str
    trace_id: str
    status: RunStatus
    values: dict[str, SummaryValue] = Field(default_factory=dict)
    checks: list[CheckResult] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)
    error: Optional[ErrorDetail] = None
