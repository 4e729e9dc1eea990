"""
Structured logging for cqlab runs.

Emits JSON-formatted log events; artifacts never contain log output.
"""

import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Optional

logging.basicConfig(
    level=os.environ.get("CQLAB_LOG_LEVEL", "INFO").upper(),
    format='%(message)s'
)

logger = logging.getLogger("cqlab")


def _get_timestamp() -> str:
    """Get current ISO-8601 timestamp."""
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def _emit(level: int, event_name: str, trace_id: Optional[str], **fields: Any) -> None:
    event = {
        "event_name": event_name,
        "timestamp": _get_timestamp(),
        "trace_id": trace_id,
        **fields,
    }
    logger.log(level, json.dumps(event, default=str))


def set_level(level: str) -> None:
    """Set the cqlab logger level (DEBUG, INFO, WARNING, ...)."""
    logger.setLevel(level.upper())


def log_run_started(trace_id: str, subcommand: str, config_path: str) -> None:
    """
    Log run_started event.

    Args:
        trace_id: Run trace identifier
        subcommand: Subcommand being executed
        config_path: Experiment file path
    """
    _emit(logging.INFO, "run_started", trace_id, subcommand=subcommand, config_path=config_path)


def log_run_completed(
    trace_id: str,
    subcommand: str,
    status: str,
    execution_time_ms: int,
) -> None:
    """
    Log run_completed event.

    Args:
        trace_id: Run trace identifier
        subcommand: Subcommand executed
        status: success, failed_checks or error
        execution_time_ms: Execution duration in milliseconds
    """
    _emit(
        logging.INFO,
        "run_completed",
        trace_id,
        subcommand=subcommand,
        status=status,
        execution_time_ms=execution_time_ms,
    )


def log_error_raised(
    trace_id: str,
    subcommand: str,
    error_code: str,
    error_name: str,
    error_message: str,
) -> None:
    """Log error_raised event."""
    _emit(
        logging.ERROR,
        "error_raised",
        trace_id,
        subcommand=subcommand,
        error_code=error_code,
        error_name=error_name,
        error_message=error_message,
    )


def log_config_rejected(
    trace_id: Optional[str],
    config_path: str,
    error_code: str,
    location: Optional[str],
    message: str,
) -> None:
    """
    Log config_rejected event, one per validation error.

    Args:
        trace_id: Run trace identifier (None when loading outside a run)
        config_path: Experiment file path
        error_code: E-CFG-* or E-EXPR-* code
        location: Offending config key
        message: Validation message
    """
    _emit(
        logging.WARNING,
        "config_rejected",
        trace_id,
        config_path=config_path,
        error_code=error_code,
        location=location,
        message=message,
    )


def log_solver_warning(solver: str, warning: str, **details: Any) -> None:
    """
    Log solver_warning event (CFL advisory, constraint drift, clamp mass).

    Args:
        solver: Emitting solver (evolve_full, evolve_correction, ...)
        warning: Short machine-readable warning name
        details: Numeric context
    """
    _emit(logging.WARNING, "solver_warning", None, solver=solver, warning=warning, **details)


def log_artifact_written(trace_id: str, path: str, kind: str) -> None:
    """Log artifact_written event at DEBUG level."""
    _emit(logging.DEBUG, "artifact_written", trace_id, path=path, kind=kind)
