"""
Unit tests for cqlab.config and cqlab.constraint_engine.

Covers:
  - Loading a valid experiment file and its defaults
  - Unreadable files (E-CFG-001)
  - Schema and semantic errors, all collected in one pass (E-CFG-002)
  - Expression and kernel errors keep their own codes
  - config_rejected log events
  - Assembly into grid, model, kernel and initial state
  - Shipped configs keep the initial state off the box edges
  - Worker-count resolution
"""

import json
import logging
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from cqlab.config import build_experiment, load_config, worker_count
from cqlab.constraint_engine import check_config
from cqlab.diagnostics import boundary_mass, density, edge_band
from cqlab.errors import ConfigError, ConfigUnreadable
from cqlab.models import ErrorCode, ExperimentConfig
from cqlab.polar import total_probability

SHIPPED = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.toml"))

BASE = """
[grid]
nx = 32
ny = 32
x_min = -4.0
x_max = 4.0
y_min = -6.0
y_max = 6.0

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
sigma_x = 0.4
p0 = 0.5

[solver]
dt = 1e-3
t_final = 0.05
snapshot_stride = 10
"""


def _write(tmp_path: Path, text: str = BASE, name: str = "exp.toml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _replace(old: str, new: str) -> str:
    assert old in BASE
    return BASE.replace(old, new)


def _errors(tmp_path: Path, text: str):
    with pytest.raises(ConfigError) as exc_info:
        load_config(_write(tmp_path, text))
    return exc_info.value.errors


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


class TestLoadConfig:
    def test_valid_file(self, tmp_path):
        config = load_config(_write(tmp_path))
        assert isinstance(config, ExperimentConfig)
        assert config.grid.nx == 32
        assert config.grid.periodic_x and config.grid.periodic_y
        assert config.model.m1 == 1.0
        assert config.solver.r_min == 1e-8
        assert config.convergence.epsilons == [0.2, 0.1, 0.05]
        assert config.checks.equivalence_max == 1e-6
        assert config.measurement is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigUnreadable) as exc_info:
            load_config(tmp_path / "absent.toml")
        assert exc_info.value.code is ErrorCode.E_CFG_001

    def test_invalid_toml(self, tmp_path):
        with pytest.raises(ConfigUnreadable):
            load_config(_write(tmp_path, "[grid\nnx = 3"))

    def test_zero_dt_rejected(self, tmp_path):
        errors = _errors(tmp_path, _replace("dt = 1e-3", "dt = 0.0"))
        assert [e.location for e in errors] == ["solver.dt"]
        assert errors[0].code is ErrorCode.E_CFG_002

    def test_all_errors_collected(self, tmp_path):
        text = _replace("nx = 32", "nx = 4").replace("dt = 1e-3", "dt = -1.0").replace(
            "epsilon = 0.1", "epsilon = 2.0"
        )
        locations = {e.location for e in _errors(tmp_path, text)}
        assert locations == {"grid.nx", "solver.dt", "model.epsilon"}

    def test_unknown_key_is_a_schema_error(self, tmp_path):
        errors = _errors(tmp_path, _replace("p0 = 0.5", "p0 = 0.5\nmomentum = 1.0"))
        assert errors[0].code is ErrorCode.E_CFG_002
        assert errors[0].location == "initial.momentum"

    def test_missing_section_is_a_schema_error(self, tmp_path):
        text = BASE.split("[solver]")[0]
        errors = _errors(tmp_path, text)
        assert any(e.location == "solver" for e in errors)

    def test_model_and_dimensional_are_exclusive(self, tmp_path):
        text = BASE + '\n[dimensional]\nM1 = 100.0\nM2 = 1.0\nL1 = 1.0\nL2 = 1.0\nT = 1.0\nhbar = 1.0\n'
        errors = _errors(tmp_path, text)
        assert [e.location for e in errors] == ["model"]


class TestSemanticChecks:
    def test_expression_error_keeps_its_code(self, tmp_path):
        errors = _errors(tmp_path, _replace('U = "x^2/2"', 'U = "x +"'))
        assert errors[0].code is ErrorCode.E_EXPR_001
        assert errors[0].location == "model.U"
        assert errors[0].name == "ExpressionSyntaxError"

    def test_classical_potential_must_not_depend_on_y(self, tmp_path):
        errors = _errors(tmp_path, _replace('U = "x^2/2"', 'U = "x^2/2 + y"'))
        assert [e.location for e in errors] == ["model.U"]

    def test_window_outside_domain(self, tmp_path):
        errors = _errors(tmp_path, _replace("b = 1.0", "b = 9.0"))
        assert errors[0].code is ErrorCode.E_KER_001

    def test_point_kernel_needs_a(self, tmp_path):
        text = _replace('type = "window"\na = -1.0\nb = 1.0', 'type = "point"')
        assert [e.location for e in _errors(tmp_path, text)] == ["kernel"]

    def test_general_kernel_must_not_depend_on_x(self, tmp_path):
        text = _replace('type = "window"\na = -1.0\nb = 1.0', 'type = "kernel"\nalpha = "exp(-x*y)"')
        assert [e.location for e in _errors(tmp_path, text)] == ["kernel.alpha"]

    def test_correlation_bound(self, tmp_path):
        errors = _errors(tmp_path, _replace("p0 = 0.5", "p0 = 0.5\ncorrelation = 5.0"))
        assert [e.location for e in errors] == ["initial.correlation"]

    def test_measurement_time_within_run(self, tmp_path):
        text = BASE + "\n[measurement]\nomega_y = [0.0, 6.0]\nt_meas = 1.0\n"
        assert [e.location for e in _errors(tmp_path, text)] == ["measurement.t_meas"]

    def test_repeated_epsilons(self, tmp_path):
        text = BASE + "\n[convergence]\nepsilons = [0.1, 0.1]\n"
        assert [e.location for e in _errors(tmp_path, text)] == ["convergence.epsilons"]

    def test_check_config_is_stateless(self, tmp_path):
        config = load_config(_write(tmp_path))
        assert check_config(config, "t") == []
        assert check_config(config, "t") == []

    def test_config_rejected_event_logged(self, tmp_path):
        emitted = []
        original_log = logging.Logger.log

        def capture(self, level, msg, *args, **kwargs):
            emitted.append(msg)
            original_log(self, level, msg, *args, **kwargs)

        with patch.object(logging.Logger, "log", capture):
            with pytest.raises(ConfigError):
                load_config(_write(tmp_path, _replace("dt = 1e-3", "dt = 0.0")), trace_id="trace-1")

        events = [json.loads(e) for e in emitted if '"event_name": "config_rejected"' in e]
        assert len(events) == 1
        assert events[0]["trace_id"] == "trace-1"
        assert events[0]["error_code"] == ErrorCode.E_CFG_002.value
        assert events[0]["location"] == "solver.dt"
        assert "timestamp" in events[0]


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


class TestBuildExperiment:
    def test_assembles_solver_inputs(self, tmp_path):
        exp = build_experiment(load_config(_write(tmp_path)))
        assert exp.grid.shape == (32, 32)
        assert exp.kernel.describe() == "window[-1,1]"
        assert exp.kernel_alt is None
        assert exp.model.epsilon == 0.1
        assert exp.n_steps == 50
        assert total_probability(exp.state0) == pytest.approx(1.0, abs=1e-12)
        assert exp.measurement_region().mask(exp.grid).all()

    def test_general_alternative_kernel(self, tmp_path):
        text = BASE + '\n[kernel_alt]\ntype = "kernel"\nalpha = "exp(-y^2)"\n'
        exp = build_experiment(load_config(_write(tmp_path, text)))
        assert exp.kernel_alt is not None
        assert float(np.sum(exp.kernel_alt.weights)) == pytest.approx(1.0, abs=1e-14)

    def test_measurement_region(self, tmp_path):
        text = BASE + "\n[measurement]\nomega_y = [0.0, 6.0]\nomega_x = [-1.0, 1.0]\nt_meas = 0.01\n"
        exp = build_experiment(load_config(_write(tmp_path, text)))
        mask = exp.measurement_region().mask(exp.grid)
        X, Y = exp.grid.mesh()
        assert np.array_equal(mask, (Y >= 0.0) & (X >= -1.0) & (X <= 1.0))

    def test_dimensional_model(self, tmp_path):
        text = _replace(
            '[model]\nepsilon = 0.1\nU = "x^2/2"\nV = "y^2/2 + 0.2*x*y"',
            '[dimensional]\nM1 = 100.0\nM2 = 2.0\nL1 = 1.0\nL2 = 1.0\nT = 1.0\nhbar = 1.0\nU = "x^2"',
        )
        exp = build_experiment(load_config(_write(tmp_path, text)))
        assert exp.model.epsilon == pytest.approx(0.02)

    @pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.name)
    def test_shipped_configs_decay_at_the_edges(self, path):
        config = load_config(path)
        exp = build_experiment(config)
        assert config.checks.boundary_mass_max == 1e-12
        assert boundary_mass(density(exp.state0), edge_band(exp.grid)) <= 1e-12


class TestWorkerCount:
    def test_override_wins(self, monkeypatch):
        monkeypatch.setenv("CQLAB_WORKERS", "4")
        assert worker_count(2) == 2
        assert worker_count(0) == 1

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("CQLAB_WORKERS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("CQLAB_WORKERS", "many")
        assert worker_count() == 1
        monkeypatch.delenv("CQLAB_WORKERS")
        assert worker_count() == 1
