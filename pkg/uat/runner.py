"""
cqlab acceptance runner

Loads scenario YAML files, runs each subcommand through the cqlab command
line in a fresh output directory, then judges the exit status and the
summary.txt values against the scenario's expectation.

Usage (called by uat.sh, or directly):
    python3 uat/runner.py
    python3 uat/runner.py --scenarios uat/scenarios/acceptance.yaml
    python3 uat/runner.py --scenarios-dir uat/scenarios/ --keep-output out/uat
"""

import argparse
import math
import subprocess
import sys
import tempfile
from pathlib import Path
from typing import Any

import yaml

REPO_ROOT = Path(__file__).resolve().parent.parent

# ANSI colours
GREEN  = "\033[0;32m"
RED    = "\033[0;31m"
YELLOW = "\033[1;33m"
CYAN   = "\033[0;36m"
BOLD   = "\033[1m"
NC     = "\033[0m"


def _c(colour: str, text: str) -> str:
    return f"{colour}{text}{NC}"


# ---------------------------------------------------------------------------
# Judge
# ---------------------------------------------------------------------------

def _read_summary(path: Path) -> dict[str, str]:
    out = {}
    if not path.is_file():
        return out
    for line in path.read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition(" = ")
        if sep:
            out[key.strip()] = value.strip()
    return out


def _as_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def judge(expect: dict[str, Any], exit_code: int, summary: dict[str, str]) -> list[str]:
    """
    Compare a run against its expectation. Returns the list of failures.

    Expectation keys:
      exit:     expected exit status
      equals:   {key: exact summary text}
      at_most:  {key: upper bound}
      at_least: {key: lower bound}
      within:   {key: [lo, hi]}
    """
    failures = []
    if "exit" in expect and exit_code != expect["exit"]:
        failures.append(f"exit status {exit_code}, expected {expect['exit']}")

    for key, want in expect.get("equals", {}).items():
        got = summary.get(key)
        if got != str(want):
            failures.append(f"{key} = {got!r}, expected {want!r}")
    for key, bound in expect.get("at_most", {}).items():
        value = _as_float(summary.get(key, "nan"))
        if not value <= bound:
            failures.append(f"{key} = {value:g}, expected <= {bound:g}")
    for key, bound in expect.get("at_least", {}).items():
        value = _as_float(summary.get(key, "nan"))
        if not value >= bound:
            failures.append(f"{key} = {value:g}, expected >= {bound:g}")
    for key, (lo, hi) in expect.get("within", {}).items():
        value = _as_float(summary.get(key, "nan"))
        if not lo <= value <= hi:
            failures.append(f"{key} = {value:g}, expected in [{lo:g}, {hi:g}]")
    return failures


# ---------------------------------------------------------------------------
# Scenario loader
# ---------------------------------------------------------------------------

def load_scenarios(path: Path) -> list[dict]:
    """
    Load one YAML file. Expected structure:

    scenarios:
      - name: ...
        description: ...
        subcommand: evolve-limit
        config: configs/benchmark_small.toml   # relative to the repo root
        args: ["--plots"]                     # optional
        expect:
          exit: 0
          at_most: {constraint_drift: 1.0e-10}
    """
    with open(path) as f:
        data = yaml.safe_load(f)
    return data.get("scenarios", [])


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------

def run_scenario(scenario: dict, out_root: Path) -> bool:
    """
    Execute one scenario through `python -m cqlab` and print the verdict.
    Returns True if passed.
    """
    name        = scenario.get("name", "unnamed")
    description = scenario.get("description", "")
    expect      = scenario.get("expect", {})

    print(f"  {_c(BOLD, name)}")
    if description:
        print(f"  {_c(CYAN, description)}")

    out_dir = out_root / name
    command = [
        sys.executable,
        "-m",
        "cqlab",
        scenario["subcommand"],
        "--config",
        str(REPO_ROOT / scenario["config"]),
        "--out",
        str(out_dir),
        *scenario.get("args", []),
    ]
    proc = subprocess.run(
        command,
        cwd=REPO_ROOT,
        capture_output=True,
        text=True,
        timeout=scenario.get("timeout", 3600),
        check=False,
    )
    summary = _read_summary(out_dir / "summary.txt")
    failures = judge(expect, proc.returncode, summary)

    if not failures:
        print(f"  {_c(GREEN, 'PASS')} (exit {proc.returncode}, status {summary.get('status', '?')})")
    else:
        print(f"  {_c(RED, 'FAIL')}")
        for failure in failures:
            print(f"    {failure}")
        if proc.stderr:
            print(f"  stderr excerpt: {proc.stderr.strip()[-300:]}")

    print()
    return not failures


# ---------------------------------------------------------------------------
# Main
# ---------------------------------------------------------------------------

def main() -> int:
    parser = argparse.ArgumentParser(description="cqlab acceptance runner")
    parser.add_argument("--scenarios",     help="Single scenario YAML file")
    parser.add_argument("--scenarios-dir", help="Directory of scenario YAML files")
    parser.add_argument("--keep-output",   help="Write run directories here instead of a temporary directory")
    args = parser.parse_args()

    # Collect scenario files
    scenario_files: list[Path] = []
    if args.scenarios:
        scenario_files = [Path(args.scenarios)]
    elif args.scenarios_dir:
        scenario_files = sorted(Path(args.scenarios_dir).glob("*.yaml"))
    else:
        default_dir = Path(__file__).parent / "scenarios"
        scenario_files = sorted(default_dir.glob("*.yaml"))

    if not scenario_files:
        print(_c(YELLOW, "[WARN] No scenario files found."))
        return 0

    total  = 0
    passed = 0

    with tempfile.TemporaryDirectory(prefix="cqlab-uat-") as tmp:
        out_root = Path(args.keep_output) if args.keep_output else Path(tmp)
        for yaml_path in scenario_files:
            print(_c(BOLD, f"\n{'='*60}"))
            print(_c(BOLD, f"Scenario file: {yaml_path.name}"))
            print(_c(BOLD, f"{'='*60}"))

            for scenario in load_scenarios(yaml_path):
                total += 1
                if run_scenario(scenario, out_root / yaml_path.stem):
                    passed += 1

    # Summary
    failed = total - passed
    print(_c(BOLD, f"{'='*60}"))
    print(f"Results: {_c(GREEN, str(passed))} passed, {_c(RED, str(failed))} failed, {total} total")
    print(_c(BOLD, f"{'='*60}"))

    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
