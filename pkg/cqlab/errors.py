"""
Exception hierarchy.

Every error named by the solvers derives from CqlabError and carries a stable
ErrorCode, so the executor can turn any failure into an ErrorDetail without
knowing which module raised it.
"""

from typing import Any, Optional

from cqlab.models import ErrorCode, ErrorDetail


class CqlabError(Exception):
    """Base class for all cqlab errors."""

    code: ErrorCode = ErrorCode.E_NUM_003
    recoverable: bool = False

    def __init__(self, message: str, location: Optional[str] = None, **context: Any) -> None:
        super().__init__(message)
        self.message = message
        self.location = location
        self.context = context

    def to_detail(self, trace_id: str) -> ErrorDetail:
        """Convert to a structured ErrorDetail."""
        return ErrorDetail(
            code=self.code,
            name=type(self).__name__,
            message=self.message,
            recoverable=self.recoverable,
            trace_id=trace_id,
            location=self.location,
        )


class ConfigError(CqlabError):
    """Config file invalid. Carries every validation error, not just the first."""

    code = ErrorCode.E_CFG_002
    recoverable = True

    def __init__(self, errors: list[ErrorDetail]) -> None:
        summary = "; ".join(e.message for e in errors)
        super().__init__(f"{len(errors)} configuration error(s): {summary}")
        self.errors = errors

    def to_detail(self, trace_id: str) -> ErrorDetail:
        detail = super().to_detail(trace_id)
        if len(self.errors) == 1:
            return self.errors[0].model_copy(update={"trace_id": trace_id})
        return detail


class ConfigUnreadable(CqlabError):
    code = ErrorCode.E_CFG_001
    recoverable = True


class ExpressionSyntaxError(CqlabError):
    """Malformed potential expression; `offset` is the byte offset of the failure."""

    code = ErrorCode.E_EXPR_001
    recoverable = True

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at offset {offset}", location=f"offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExpressionSyntaxError):
    code = ErrorCode.E_EXPR_002


class ArityMismatch(ExpressionSyntaxError):
    code = ErrorCode.E_EXPR_003


class ExpressionEvaluationError(CqlabError):
    code = ErrorCode.E_EXPR_004
    recoverable = True


class GridError(CqlabError):
    code = ErrorCode.E_GRID_001


class MonotonicityError(CqlabError):
    code = ErrorCode.E_GRID_002


class KernelError(CqlabError):
    code = ErrorCode.E_KER_001
    recoverable = True


class NodeDetected(CqlabError):
    code = ErrorCode.E_POL_001


class WindingDetected(CqlabError):
    code = ErrorCode.E_POL_002


class RegionError(CqlabError):
    code = ErrorCode.E_POL_003
    recoverable = True


class BlowUpDetected(CqlabError):
    code = ErrorCode.E_NUM_001


class AmplitudeFloorBreached(CqlabError):
    code = ErrorCode.E_NUM_002


class StateError(CqlabError):
    code = ErrorCode.E_NUM_003


class CausticFormed(CqlabError):
    code = ErrorCode.E_FLOW_001

    def __init__(self, message: str, caustic_time: Optional[float] = None) -> None:
        super().__init__(message, caustic_time=caustic_time)
        self.caustic_time = caustic_time


class FlowEscape(CqlabError):
    code = ErrorCode.E_FLOW_002


class CorrectedAmplitudeError(CqlabError):
    code = ErrorCode.E_COR_001


class UnsupportedSubcommand(CqlabError):
    code = ErrorCode.E_RUN_001
    recoverable = True


class OutputError(CqlabError):
    code = ErrorCode.E_RUN_002
    recoverable = True
