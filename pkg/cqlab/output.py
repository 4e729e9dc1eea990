"""
Artifact writers: CSV tables, the key = value summary and SVG plots.

CSV numbers use 17 significant digits so two runs of the same config give
byte-identical files. Plots are reproducible unless timestamps are requested.
"""

from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from cqlab.errors import OutputError  # noqa: E402
from cqlab.models import RunResult  # noqa: E402

Cell = Union[int, float, str]

_SVG_SALT = "cqlab"


def _format(cell: Cell) -> str:
    if isinstance(cell, (bool, np.bool_)):
        return "true" if cell else "false"
    if isinstance(cell, (int, np.integer)):
        return str(int(cell))
    if isinstance(cell, (float, np.floating)):
        return "%.17g" % float(cell)
    return str(cell)


def ensure_dir(out_dir: Path) -> Path:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out_dir}: {exc}", location=str(out_dir)) from exc
    return out_dir


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Cell]]) -> Path:
    """Comma-separated table with a header row; newline is always \\n."""
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise OutputError(f"row of length {len(row)} does not match header {list(header)}")
        lines.append(",".join(_format(c) for c in row))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", location=str(path)) from exc
    return path


def write_field_csv(path: Path, x: np.ndarray, y: np.ndarray, columns: dict[str, np.ndarray]) -> Path:
    """Long-format table x, y, <columns...> for fields of shape (nx, ny)."""
    X, Y = np.meshgrid(x, y, indexing="ij")
    names = list(columns)
    flat = [columns[n].ravel() for n in names]
    rows = (
        [X.flat[i], Y.flat[i], *(c[i] for c in flat)]
        for i in range(X.size)
    )
    return write_csv(path, ["x", "y", *names], rows)


def render_summary(result: RunResult) -> str:
    """Flat key = value text; check lines read check.<name> = pass|fail (value, bound)."""
    lines = [
        f"subcommand = {result.subcommand}",
        f"status = {result.status.value}",
    ]
    for key in sorted(result.values):
        lines.append(f"{key} = {_format(result.values[key])}")
    for check in result.checks:
        verdict = "pass" if check.passed else "fail"
        lines.append(f"check.{check.name} = {verdict} ({_format(check.value)} {check.bound})")
    if result.error is not None:
        lines.append(f"error_code = {result.error.code.value}")
        lines.append(f"error_name = {result.error.name}")
        lines.append(f"error_message = {result.error.message}")
    lines.append(f"artifacts = {' '.join(result.artifacts)}")
    return "\n".join(lines) + "\n"


def write_summary(path: Path, result: RunResult) -> Path:
    try:
        path.write_text(render_summary(result), encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}", location=str(path)) from exc
    return path


def read_summary(path: Path) -> dict[str, str]:
    """Parse a summary file back into a dict of strings."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition(" = ")
        if sep:
            out[key.strip()] = value.strip()
    return out


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------

def _save(fig, path: Path, timestamps: bool) -> Path:
    metadata = None if timestamps else {"Date": None}
    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT}):
        fig.savefig(path, format="svg", bbox_inches="tight", metadata=metadata)
    plt.close(fig)
    return path


def plot_density(path: Path, x: np.ndarray, y: np.ndarray, rho: np.ndarray, title: str, timestamps: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(x, y, rho.T, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="rho")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    return _save(fig, path, timestamps)


def plot_marginals(
    path: Path,
    x: np.ndarray,
    curves: dict[str, np.ndarray],
    title: str,
    timestamps: bool = False,
) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, values in curves.items():
        ax.plot(x, values, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("rho1")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path, timestamps)


def plot_convergence(
    path: Path,
    epsilons: Sequence[float],
    series: dict[str, tuple[Sequence[float], Optional[float]]],
    timestamps: bool = False,
) -> Path:
    """Log-log error lines, one per series, with the fitted slope in the legend."""
    fig, ax = plt.subplots(figsize=(5, 4))
    eps = np.asarray(epsilons, dtype=float)
    for label, (errors, slope) in series.items():
        name = label if slope is None else f"{label} (slope {slope:.2f})"
        ax.loglog(eps, np.asarray(errors, dtype=float), "o-", label=name)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("error")
    ax.grid(True, which="both", lw=0.3)
    ax.legend()
    return _save(fig, path, timestamps)
