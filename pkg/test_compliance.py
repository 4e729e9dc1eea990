#!/usr/bin/env python3
"""
Command-line compliance tests for cqlab.

Drives main() the way a user would; no solver internals are imported.
Exit status: 0 success, 1 failed checks, 2 error.
"""

import subprocess
import sys
from pathlib import Path

import pytest

from cqlab import __version__
from cqlab.main import EXIT_ERROR, EXIT_FAILED_CHECKS, EXIT_OK, main
from cqlab.output import read_summary

CONFIG = """
[grid]
nx = 48
ny = 32
x_min = -6.0
x_max = 6.0
y_min = -7.0
y_max = 7.0

[model]
epsilon = 0.1
U = "x^2/2"
V = "y^2/2 + 0.2*x*y"

[kernel]
type = "window"
a = -1.0
b = 1.0

[initial]
x0 = 0.3
sigma_x = 0.5
p0 = 0.5

[solver]
dt = 1e-3
t_final = 0.05
snapshot_stride = 25
"""


@pytest.fixture
def config_file(tmp_path):
    def write(text: str = CONFIG) -> Path:
        path = tmp_path / "exp.toml"
        path.write_text(text, encoding="utf-8")
        return path

    return write


def _cli(subcommand: str, config: Path, out: Path, *extra: str) -> int:
    return main([subcommand, "--config", str(config), "--out", str(out), *extra])


# ---------------------------------------------------------------------------
# Exit status
# ---------------------------------------------------------------------------


def test_success_exits_zero(config_file, tmp_path):
    out = tmp_path / "out"
    assert _cli("operator-check", config_file(), out) == EXIT_OK
    summary = read_summary(out / "summary.txt")
    assert summary["status"] == "success"
    assert summary["check.equivalence"].startswith("pass")


def test_invalid_config_exits_two(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert _cli("evolve-limit", config_file(CONFIG.replace("dt = 1e-3", "dt = 0.0")), out) == EXIT_ERROR
    assert "ConfigValidation" in capsys.readouterr().err
    assert read_summary(out / "summary.txt")["error_code"] == "E-CFG-002"


def test_unsupported_subcommand_exits_two(config_file, tmp_path):
    out = tmp_path / "out"
    assert _cli("evolve-sideways", config_file(), out) == EXIT_ERROR
    assert read_summary(out / "summary.txt")["error_code"] == "E-RUN-001"


def test_failed_check_exits_one(config_file, tmp_path):
    out = tmp_path / "out"
    text = CONFIG + "\n[checks]\nboundary_mass_max = -1.0\n"
    assert _cli("evolve-full", config_file(text), out) == EXIT_FAILED_CHECKS
    assert read_summary(out / "summary.txt")["status"] == "failed_checks"


def test_missing_required_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc_info:
        main(["evolve-limit", "--out", str(tmp_path)])
    assert exc_info.value.code == 2


# ---------------------------------------------------------------------------
# Reproducibility
# ---------------------------------------------------------------------------


def test_csv_artifacts_byte_identical(config_file, tmp_path):
    config = config_file()
    assert _cli("evolve-limit", config, tmp_path / "a") == EXIT_OK
    assert _cli("evolve-limit", config, tmp_path / "b") == EXIT_OK
    for name in ("limit_marginals.csv", "limit_final.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_plots_reproducible_by_default(config_file, tmp_path):
    config = config_file()
    assert _cli("evolve-limit", config, tmp_path / "a", "--plots") == EXIT_OK
    assert _cli("evolve-limit", config, tmp_path / "b", "--plots") == EXIT_OK
    for name in ("limit_density.svg", "limit_marginals.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_version_from_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "cqlab", "--version"],
        capture_output=True,
        text=True,
        cwd=Path(__file__).parent,
        check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == f"cqlab {__version__}"
