"""End-to-end command line tests: exit codes, diagnostics, determinism."""
import numpy as np
import pytest

from tumorctrl.cli import main
from tumorctrl.snapshots import read_snapshot_csv

ZERO_SCENARIO = """
[grid]
nx = 8
ny = 8
[time]
t_final = 0.3
steps = 6
[model]
phi0 = zero
sigma0 = zero
sigma_boundary = zero
z0 = const:0.5
force_x = zero
force_y = zero
[run]
seed = 3
"""

ODE_SCENARIO = """
[grid]
nx = 6
ny = 6
[time]
t_final = 0.5
steps = 50
[model]
k1_const = 0.5
k2_const = 1.0
s_const = 0.8
phi0 = const:0.25
sigma0 = const:0.6
sigma_boundary = const:0.6
z0 = const:0.45
force_x = zero
force_y = zero
[controls]
chi1 = const:0.15
chi2 = const:0.234375
"""


def write_cfg(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_zero_scenario_runs_clean(tmp_path, capsys):
    cfg = write_cfg(tmp_path, ZERO_SCENARIO)
    rc = main(["simulate", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    for name in ("phi_00006", "sigma_00006", "ux_00006"):
        fld, _ = read_snapshot_csv(tmp_path / "out" / f"{name}.csv")
        assert np.all(fld.values == 0.0)


def test_zero_initial_damage_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[model]\nz0 = zero\n")
    rc = main(["simulate", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "initial-data-range" in capsys.readouterr().out


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[grid]\nnx = 8\nbogus = 1\n")
    rc = main(["simulate", "--config", cfg])
    assert rc == 2
    assert "unknown key 'bogus'" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.ini")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_infeasible_box_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[admissible]\nchi1_low = 0.9\nchi1_high = 0.1\n")
    rc = main(["optimize", "--config", cfg, "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "boxes are empty" in capsys.readouterr().err


def test_separation_prints_closed_form_radii(tmp_path, capsys):
    text = """
[grid]
nx = 8
ny = 8
[time]
t_final = 0.3
steps = 12
[model]
c1 = 1.0
c2 = 0.0
iota_const = 1.9
z0 = const:0.5
"""
    cfg = write_cfg(tmp_path, text)
    rc = main(["separation", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 0
    assert "0.11920 / 0.88080" in out
    assert "contained" in out


def test_separation_infeasible_slope_names_condition(tmp_path, capsys):
    text = "[model]\nc1 = 0.05\niota_const = 5.0\nz0 = const:0.5\n"
    cfg = write_cfg(tmp_path, text)
    rc = main(["separation", "--config", cfg])
    assert rc == 1
    assert "lower-sign-condition" in capsys.readouterr().out


def test_gradient_check_small_config(tmp_path, capsys):
    text = """
[grid]
nx = 8
ny = 8
[time]
steps = 16
[controls]
chi1 = const:0.08
chi2 = const:0.12
[cost]
alpha6 = 0.3
alpha7 = 1.0
alpha9 = 0.001
[run]
seed = 5
"""
    cfg = write_cfg(tmp_path, text)
    rc = main(["gradient-check", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 0
    assert "taylor slope" in out
    assert "PASS" in out


def test_optimize_effort_only_hits_floor(tmp_path, capsys):
    text = """
[grid]
nx = 6
ny = 6
[time]
t_final = 0.4
steps = 4
[cost]
alpha1 = 0.0
alpha2 = 0.0
alpha9 = 1.0
[controls]
chi1 = const:0.5
chi2 = const:0.5
[optimizer]
max_iters = 20
tol = 1e-10
"""
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "out"
    rc = main(["optimize", "--config", cfg, "--out", str(out)])
    assert rc == 0
    assert "converged" in capsys.readouterr().out
    rows = (out / "history.csv").read_text().strip().split("\n")[1:]
    assert float(rows[-1].split(",")[1]) < 1e-8


def test_repeated_runs_write_identical_files(tmp_path):
    cfg = write_cfg(tmp_path, ZERO_SCENARIO)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_hypothesis_check_reports_all_rows(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[grid]\nnx = 8\nny = 8\n")
    rc = main(["hypothesis-check", "--config", cfg])
    out = capsys.readouterr().out
    assert rc == 0
    assert "0 failing" in out
    assert "initial-data-range" in out


def test_oracle_on_reducible_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, ODE_SCENARIO)
    rc = main(["simulate", "--config", cfg, "--oracle", "--out", str(tmp_path / "out")])
    out = capsys.readouterr().out
    assert rc == 0
    line = next(l for l in out.split("\n") if "pointwise oracle" in l)
    err = float(line.split("sup error")[1].split()[0])
    assert err < 5e-3


def test_oracle_rejects_inhomogeneous_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[grid]\nnx = 8\nny = 8\n")
    rc = main(["simulate", "--config", cfg, "--oracle", "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "pointwise oracle" in capsys.readouterr().err
