from __future__ import annotations

import csv
import json
import os
import subprocess
import sys

import pytest

from toralseries.cli import RunConfig, main, run
from toralseries.errors import ConfigError

SMALL_SECULAR = """\
schema_version = 1
mode = "secular-1d"

[system]
matrix = [[2, 1], [1, 1]]
perturbation = [[[0, 1], 0, 1.0], [[1, 1], 1, 0.5, "cos"]]

[series]
order = 2
tau = 1e-14
tau_growth = 100.0
budget = 1e-4

[residual]
eps_count = 5
n_points = 40
certificate_points = 200

[diagnostics]
order = 4
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_secular_run_and_determinism(tmp_path):
    cfg = RunConfig.from_text(SMALL_SECULAR)
    a = run(cfg, str(tmp_path / "a"))
    b = run(cfg, str(tmp_path / "b"))
    assert a.exit_code == 0 and a.status == "OK"
    for name in ("report.txt", "slopes.csv", "residuals.csv", "manifest.json",
                 "secular_series.txt", "norms_vs_bounds.csv"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name), name
    report = (tmp_path / "a" / "report.txt").read_text()
    assert cfg.hash in report
    assert "eps_bar(beta)" in report and "empirical radius" in report
    slopes = list(csv.DictReader(open(tmp_path / "a" / "slopes.csv")))
    assert [float(r["slope"]) for r in slopes] == pytest.approx([2, 3, 2, 3], abs=0.1)
    assert all(r["config_hash"] == cfg.hash for r in slopes)
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.hash and "report.txt" in manifest["files"]


def test_trivial_system_is_flagged(tmp_path):
    text = SMALL_SECULAR.replace('perturbation = [[[0, 1], 0, 1.0], [[1, 1], 1, 0.5, "cos"]]',
                                 "perturbation = []")
    art = run(RunConfig.from_text(text), str(tmp_path))
    assert art.exit_code == 0
    report = (tmp_path / "report.txt").read_text()
    assert "trivial system" in report
    assert "every series coefficient is zero" in report


def test_gershgorin_failure_exits_2(tmp_path):
    text = SMALL_SECULAR.replace("[residual]\n", "[residual]\neps_min = 0.5\neps_max = 5.0\n")
    art = run(RunConfig.from_text(text), str(tmp_path))
    assert art.exit_code == 2 and art.status == "FAILED"
    report = (tmp_path / "report.txt").read_text()
    assert "status: FAILED" in report and "violating points:" in report


def test_budget_abort_exits_4(tmp_path):
    text = SMALL_SECULAR.replace("budget = 1e-4", "budget = 0.0").replace("tau = 1e-14",
                                                                          "tau = 1e-3")
    art = run(RunConfig.from_text(text), str(tmp_path))
    assert art.exit_code == 4 and art.status == "ABORTED"
    assert "BudgetExceeded" in (tmp_path / "report.txt").read_text()


def test_bad_matrix_exits_3(tmp_path):
    text = SMALL_SECULAR.replace("matrix = [[2, 1], [1, 1]]", "matrix = [[2, 1], [1, 2]]")
    assert run(RunConfig.from_text(text), str(tmp_path)).exit_code == 3


@pytest.mark.parametrize("edit, field, line", [
    (("order = 2", "order = 2\nwobble = 1"), "series.wobble", 10),
    (("order = 2", 'order = "two"'), "series.order", 9),
    (('mode = "secular-1d"', 'mode = "nope"'), "mode", 2),
    (("[residual]", "[residuals]"), "residuals", 14),
    (("perturbation = [[[0, 1], 0, 1.0]", "perturbation = [[[0, 1, 2], 0, 1.0]"),
     "system.perturbation", 6),
])
def test_config_errors_carry_field_and_line(edit, field, line):
    text = SMALL_SECULAR.replace(*edit)
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text(text)
    assert info.value.field == field
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_config_missing_version_and_syntax():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text('mode = "block"\n')
    assert info.value.field == "schema_version"
    with pytest.raises(ConfigError) as info:
        RunConfig.from_text("schema_version = 1\nmode = \n")
    assert info.value.line == 2


def test_config_hash_ignores_formatting():
    a = RunConfig.from_text(SMALL_SECULAR)
    b = RunConfig.from_text("# comment\n" + SMALL_SECULAR.replace("order = 2", "order   =   2"))
    assert a.hash == b.hash
    c = RunConfig.from_text(SMALL_SECULAR.replace("order = 2", "order = 3"))
    assert c.hash != a.hash


def test_main_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, SMALL_SECULAR.replace("order = 2", "order = 99"), "bad.toml")
    assert main([bad]) == 3
    assert "series.order" in capsys.readouterr().err
    assert main([str(tmp_path / "missing.toml")]) == 3
    good = write(tmp_path, SMALL_SECULAR)
    assert main([good, "-o", str(tmp_path / "out"), "-q"]) == 0
    assert capsys.readouterr().out == ""
    assert os.path.exists(tmp_path / "out" / "report.txt")


def test_dimensions_symmetric_control(tmp_path):
    text = """\
schema_version = 1
mode = "dimensions"

[sampler]
seed = 5
transient = 100
steps = 500
orbits = 20

[dimensions]
B1 = [[2, 1], [1, 1]]
B2 = [[2, 1], [1, 1]]
G1 = [[[1, 0], 0, 1.0], [[0, 1], 1, 1.0]]
G2 = [[[1, 0], 0, 1.0], [[0, 1], 1, 1.0]]
eps = [0.0, 0.03]
control = false
tolerance = 5e-3
"""
    art = run(RunConfig.from_text(text), str(tmp_path))
    assert art.exit_code == 0
    rows = list(csv.DictReader(open(tmp_path / "dimensions.csv")))
    for r in rows:
        assert abs(float(r["delta"])) <= 4 * float(r["delta_err"]) + 1e-10


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, SMALL_SECULAR.replace("order = 2", "order = 1"))
    out = subprocess.run([sys.executable, "-m", "toralseries", cfg, "-o", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "Residual-order table" in out.stdout
