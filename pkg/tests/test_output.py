"""
Unit tests for cqlab.output (CSV, summary and SVG writers).
"""

import numpy as np
import pytest

from cqlab.errors import OutputError
from cqlab.models import CheckResult, ErrorCode, ErrorDetail, RunResult, RunStatus
from cqlab.output import (
    ensure_dir,
    plot_convergence,
    plot_density,
    read_summary,
    render_summary,
    write_csv,
    write_field_csv,
    write_summary,
)


def _make_result(**overrides) -> RunResult:
    fields = {
        "subcommand": "evolve-limit",
        "trace_id": "trace-1",
        "status": RunStatus.SUCCESS,
        "values": {"t_final": 0.5, "n_steps": 500, "renormalized": False},
        "checks": [CheckResult(name="backreaction", value=1e-9, bound="<= 1e-06", passed=True)],
        "artifacts": ["limit_marginals.csv", "limit_final.csv"],
    }
    fields.update(overrides)
    return RunResult(**fields)


class TestCsv:
    def test_cell_formatting(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", ["a", "b", "c", "d"], [[0.1, 3, True, "w"], [np.float64(1e-20), np.int64(2), False, "v"]])
        assert path.read_bytes() == b"a,b,c,d\n0.10000000000000001,3,true,w\n9.9999999999999995e-21,2,false,v\n"

    def test_row_length_mismatch(self, tmp_path):
        with pytest.raises(OutputError) as exc_info:
            write_csv(tmp_path / "t.csv", ["a", "b"], [[1.0]])
        assert exc_info.value.code is ErrorCode.E_RUN_002

    def test_field_csv_is_long_format(self, tmp_path):
        x = np.array([0.0, 1.0, 2.0])
        y = np.array([-1.0, 1.0])
        rho = np.arange(6, dtype=float).reshape(3, 2)
        path = write_field_csv(tmp_path / "f.csv", x, y, {"rho": rho})
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,rho"
        assert len(lines) == 7
        assert lines[2] == "0,1,1"
        assert lines[-1] == "2,1,5"

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OutputError):
            ensure_dir(blocker / "sub")


class TestSummary:
    def test_render_order(self):
        lines = render_summary(_make_result()).splitlines()
        assert lines[:2] == ["subcommand = evolve-limit", "status = success"]
        assert lines[2:5] == ["n_steps = 500", "renormalized = false", "t_final = 0.5"]
        assert lines[5] == "check.backreaction = pass (1.0000000000000001e-09 <= 1e-06)"
        assert lines[-1] == "artifacts = limit_marginals.csv limit_final.csv"

    def test_error_lines_round_trip(self, tmp_path):
        error = ErrorDetail(
            code=ErrorCode.E_POL_001,
            name="NodeDetected",
            message="amplitude below r_min inside the support",
            recoverable=False,
            trace_id="trace-1",
        )
        result = _make_result(status=RunStatus.ERROR, values={}, checks=[], artifacts=[], error=error)
        parsed = read_summary(write_summary(tmp_path / "summary.txt", result))
        assert parsed["status"] == "error"
        assert parsed["error_code"] == "E-POL-001"
        assert parsed["error_name"] == "NodeDetected"
        assert parsed["error_message"] == "amplitude below r_min inside the support"
        assert parsed["artifacts"] == ""

    def test_failed_check_line(self):
        check = CheckResult(name="norm_drift", value=0.5, bound="<= 1e-08", passed=False)
        text = render_summary(_make_result(status=RunStatus.FAILED_CHECKS, checks=[check]))
        assert "check.norm_drift = fail (0.5 <= 1e-08)\n" in text


class TestPlots:
    def test_svg_is_reproducible_without_timestamps(self, tmp_path):
        x = np.linspace(-1.0, 1.0, 8)
        y = np.linspace(-2.0, 2.0, 6)
        rho = np.exp(-np.add.outer(x ** 2, y ** 2))
        first = plot_density(tmp_path / "a.svg", x, y, rho, "rho").read_bytes()
        second = plot_density(tmp_path / "b.svg", x, y, rho, "rho").read_bytes()
        assert first.startswith(b"<?xml")
        assert first == second

    def test_convergence_plot_with_missing_slope(self, tmp_path):
        path = plot_convergence(
            tmp_path / "c.svg",
            [0.2, 0.1],
            {"zeroth": ([0.1, 0.05], 1.0), "first": ([0.01, 0.0025], None)},
        )
        assert b"slope 1.00" in path.read_bytes()
