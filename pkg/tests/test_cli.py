import json
import subprocess
import sys

import numpy as np
import pytest

from fredholm_kit.cli import main
from fredholm_kit.config import load_config, validate_config
from fredholm_kit.errors import ConfigError
from fredholm_kit.grid import Grid1D, GridFunction, read_csv, write_csv
from fredholm_kit.kernels import NormalLocation, build_matrix
from fredholm_kit.solver import mixture


def run_cli(args, capsys):
    code = main([str(a) for a in args])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


@pytest.fixture
def target_csv(tmp_path):
    tg, xg = Grid1D.uniform(0, 1, 51), Grid1D.uniform(-0.5, 1.5, 201)
    f = mixture(build_matrix(NormalLocation(0.05), xg, tg), tg.tabulate(lambda t: 1 + np.sin(3 * t)))
    f = f.with_values(f.values / f.mass())
    path = tmp_path / "f.csv"
    write_csv(f, path, ("x", "f"))
    return path


def solve_config(target, **extra):
    return {"command": "solve", "kernel": {"kind": "normal-location", "sigma": 0.05},
            "target": str(target), "theta_grid": {"min": 0, "max": 1, "nodes": 51}, **extra}


# -- validation --------------------------------------------------------------------

def test_empty_config_is_missing_command():
    with pytest.raises(ConfigError) as err:
        validate_config("   ")
    assert err.value.errors == ["missing command"]


def test_bad_json_reports_position():
    with pytest.raises(ConfigError) as err:
        validate_config('{"command": "solve",\n "seed": }')
    assert err.value.errors[0].startswith("line 2, column")


def test_grid_errors_are_named_and_aggregated(target_csv):
    raw = solve_config(target_csv, theta_grid={"min": 1, "max": 0, "nodes": 1}, seed=-1)
    with pytest.raises(ConfigError) as err:
        validate_config(raw)
    msgs = err.value.errors
    assert any(m.startswith("theta_grid.min: must be below theta_grid.max") for m in msgs)
    assert any(m.startswith("theta_grid.nodes") for m in msgs)
    assert any(m.startswith("seed") for m in msgs)


def test_minimal_solve_config_gets_defaults(target_csv):
    cfg = validate_config(solve_config(target_csv))
    assert cfg["renormalize"] is True and cfg["seed"] == 0
    assert cfg["stopping"] == {"max_iter": 500, "tol_div": 0.0, "tol_diff": 1e-5}
    assert cfg["transform"] == {"kind": "none", "t": "auto"}
    assert json.loads(cfg.to_json())["command"] == "solve"


def test_relative_paths_resolve_against_config_file(tmp_path, target_csv):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(solve_config("f.csv")))
    assert load_config(cfg_path)["target"] == str(target_csv.resolve())


@pytest.mark.parametrize("raw,fragment", [
    ({"command": "nope"}, "command: must be one of"),
    ({"command": "demo"}, "name: required"),
    ({"command": "demo", "name": "galaxy"}, "needs a data file"),
    ({"command": "demo", "name": "pareto", "params": {"bogus": 1}}, "unknown field(s) bogus"),
    ({"command": "fpt", "boundary": {"kind": "power", "gamma": 0.7}}, "boundary.gamma"),
    ({"command": "mixdens", "data": "missing.csv"}, "file not found"),
    ({"command": "solve", "kernel": {"kind": "normal-location", "sigma": -1}}, "kernel.sigma"),
])
def test_invalid_configs(raw, fragment):
    with pytest.raises(ConfigError) as err:
        validate_config(raw)
    assert any(fragment in m for m in err.value.errors), err.value.errors


# -- runs -------------------------------------------------------------------------------

def test_solve_run_directory(tmp_path, target_csv, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(solve_config(target_csv, stopping={"max_iter": 40})))
    out = tmp_path / "out"
    code, stdout, _ = run_cli(["solve", "--config", cfg, "--out", out], capsys)
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"run_config.json", "diagnostics.json", "p_final.csv", "f_final.csv"} <= names
    diag = json.loads((out / "diagnostics.json").read_text())
    for key in ("command", "iterations", "termination", "divergence_history", "warnings",
                "timings_ms", "mass_diagnostics"):
        assert key in diag
    assert len(diag["divergence_history"]) == diag["iterations"] + 1
    p = read_csv(out / "p_final.csv")
    assert len(p.grid) == 51 and np.all(p.values >= 0)


def test_rerun_from_run_config_is_byte_identical(tmp_path, target_csv, capsys):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run_cli(["solve", "--target", target_csv, "--out", first, "--max-iter", 20,
                    "--transform", "shift", "--t", 50], capsys)[0] == 2  # kernel missing
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(solve_config(target_csv, transform={"kind": "shift", "t": 50})))
    assert run_cli(["solve", "--config", cfg, "--out", first, "--max-iter", 20], capsys)[0] == 0
    assert run_cli(["solve", "--config", first / "run_config.json", "--out", second], capsys)[0] == 0
    assert csv_bytes(first) == csv_bytes(second)
    assert json.loads((second / "run_config.json").read_text())["stopping"]["max_iter"] == 20


@pytest.mark.parametrize("name,flags", [
    ("pareto", ["--max-iter", 5]),
    ("signed-1", ["--t", 50]),
    ("genkernel-2", []),
    ("deconv-2", ["--n", 100]),
    ("fpt-sqrt", ["--max-iter", 3, "--paths", 500]),
])
def test_demo_rerun_is_byte_identical(tmp_path, capsys, name, flags):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run_cli(["demo", name, "--out", first, *flags], capsys)[0] == 0
    assert run_cli(["demo", "--config", first / "run_config.json", "--out", second], capsys)[0] == 0
    assert csv_bytes(first) and csv_bytes(first) == csv_bytes(second)


def test_mixdens_and_galaxy_style_data(tmp_path, capsys):
    rng = np.random.default_rng(0)
    data = tmp_path / "speeds.csv"
    x = np.r_[rng.normal(10, 0.5, 8), rng.normal(21, 1.5, 60), rng.normal(33, 0.8, 14)]
    data.write_text("velocity\n" + "\n".join(f"{v:.3f}" for v in x) + "\n")
    out = tmp_path / "m"
    code, _, _ = run_cli(["mixdens", "--data", data, "--out", out, "--max-iter", 30], capsys)
    assert code == 0 and (out / "p_final.csv").exists()
    out = tmp_path / "g"
    code, _, _ = run_cli(["demo", "galaxy", "--data", data, "--out", out], capsys)
    assert code == 0
    assert json.loads((out / "diagnostics.json").read_text())["iterations"] == 25


def test_fpt_command_with_tabulated_boundary(tmp_path, capsys):
    csv = tmp_path / "h.csv"
    csv.write_text("t,h\n0,0\n1,0.9\n100,9\n")
    out = tmp_path / "fpt"
    code, _, _ = run_cli(["fpt", "--boundary-csv", csv, "--N", 200, "--max-iter", 3, "--out", out], capsys)
    assert code == 0
    assert {"tilde_p.csv", "p.csv", "p_cdf.csv"} <= {p.name for p in out.iterdir()}


# -- failures ------------------------------------------------------------------------------

def test_config_errors_exit_2_with_json(tmp_path, capsys):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    code, _, err = run_cli(["solve", "--config", empty], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["error"] == "config" and "missing command" in payload["messages"][0]


def test_runtime_errors_exit_1_with_json(tmp_path, target_csv, capsys):
    # a signed target cannot be solved without a shift
    f = read_csv(target_csv)
    signed = tmp_path / "signed.csv"
    write_csv(GridFunction(f.grid, f.values - 0.5), signed, ("x", "f"))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(solve_config(signed, transform={"kind": "shift", "t": 1e-6})))
    code, _, err = run_cli(["solve", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 1
    payload = json.loads(err)
    assert payload["error"] == "ShiftTooSmallError" and "shift too small" in payload["messages"][0]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fredholm_kit.cli", "demo", "signed-1",
                           "--out", str(tmp_path / "d")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "d" / "p_final.csv").exists()
