from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from freeflight.cli import (
    EXIT_CONFIG,
    EXIT_NONCONVERGENCE,
    EXIT_OK,
    EXIT_UNSAFE,
    ConfigError,
    builtin_scenario_path,
    load_scenario,
    main,
)
from freeflight.trimesh import build_mesh
from freeflight.windfield import CASES, WindField


def run(tmp_path, *argv):
    return main([*argv, "--out-dir", str(tmp_path)])


def read_json(path):
    return json.loads(path.read_text())


def test_solve_case_a_within_speed_envelope(tmp_path):
    assert run(tmp_path, "solve", "--case", "a", "--n", "101") == EXIT_OK
    data = read_json(tmp_path / "case_a_n101_values.json")
    summary = read_json(tmp_path / "case_a_n101_solve_summary.json")
    u = np.array(data["u"])
    r = np.hypot(np.array(data["x"]) - 0.0, np.array(data["y"]) - 0.5)
    c0, _ = CASES["a"]().bounds()
    assert np.all(u >= r / (1.0 + c0) - 1e-12)
    assert np.all(u <= r / (1.0 - c0) + 1e-12)
    assert summary["max_u"] == pytest.approx(u.max())
    assert summary["max_u"] <= np.hypot(1.0, 0.5) / (1.0 - c0)


def test_tol_and_scheme_are_honored(tmp_path):
    args = ("solve", "--case", "a", "--n", "31", "--tol", "1e-6", "--scheme", "gauss_seidel")
    assert run(tmp_path, *args) == EXIT_OK
    rep = read_json(tmp_path / "case_a_n31_values.json")["report"]
    assert rep["tol"] == 1e-6 and rep["scheme"] == "gauss_seidel"


@pytest.mark.parametrize("fmt", ["json", "csv", "vtk"])
def test_solve_formats(tmp_path, fmt):
    assert run(tmp_path, "solve", "--case", "b", "--n", "31", "--format", fmt) == EXIT_OK
    out = tmp_path / f"case_b_n31_values.{fmt}"
    assert out.exists()
    if fmt == "csv":
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["x", "y", "u", "pred_dx", "pred_dy"]
        assert len(rows) - 1 == build_mesh(31).n_nodes
    if fmt == "vtk":
        assert out.read_text().startswith("# vtk DataFile Version 3.0")


def test_certify_case_b_safe_destination(tmp_path):
    assert run(tmp_path, "certify", "--case", "b", "--dest", "0.9,0.25") == EXIT_OK
    rep = read_json(tmp_path / "case_b_n101_certify.json")
    assert rep["safe"] is True
    assert rep["arrival_time_gap"] <= 5 * rep["eps"] + 1e-6


def test_certify_unsafe_destination_exits_2(tmp_path):
    assert run(tmp_path, "cutloci", "--case", "b", "--n", "101", "--epsilon", "0.01") == EXIT_OK
    flagged = read_json(tmp_path / "case_b_n101_cutloci.json")["flagged"]
    mesh = build_mesh(101)
    c = mesh.points[mesh.triangles[flagged[len(flagged) // 2]]].mean(axis=0)
    dest = f"{float(c[0])!r},{float(c[1])!r}"
    assert run(tmp_path, "certify", "--case", "b", "--n", "101", "--epsilon", "0.01",
               "--dest", dest) == EXIT_UNSAFE
    assert read_json(tmp_path / "case_b_n101_certify.json")["safe"] is False


@pytest.mark.parametrize("method", ["backtrack", "shoot"])
def test_trajectory_outputs(tmp_path, method):
    assert run(tmp_path, "trajectory", "--case", "a", "--n", "51", "--dest", "0.8,0.7",
               "--method", method, "--epsilon", "apriori", "--format", "csv") == EXIT_OK
    stem = f"case_a_n51_trajectory_{method}"
    rows = list(csv.reader((tmp_path / f"{stem}.csv").open()))
    assert rows[0] == ["t", "x", "y"]
    end = np.array([float(v) for v in rows[-1][1:]])
    assert np.allclose(end, [0.8, 0.7], atol=1e-6)
    summary = read_json(tmp_path / f"{stem}_summary.json")
    assert summary["method"] == {"backtrack": "predecessor-backtrack", "shoot": "shooting"}[method]
    assert summary["eps_source"] == "a-priori"
    assert run(tmp_path, "trajectory", "--case", "a", "--n", "51", "--dest", "0.8,0.7",
               "--method", method, "--epsilon", "0.01", "--format", "vtk") == EXIT_OK
    assert "LINES 1" in (tmp_path / f"{stem}.vtk").read_text()


@pytest.mark.parametrize("fmt", ["json", "csv", "vtk"])
def test_cutloci_formats(tmp_path, fmt):
    assert run(tmp_path, "cutloci", "--case", "b", "--n", "51", "--format", fmt) == EXIT_OK
    data = read_json(tmp_path / "case_b_n51_cutloci.json")
    assert data["eps_source"].startswith("a-posteriori")
    assert set(data["flagged"]) <= set(data["marked"])
    if fmt == "vtk":
        text = (tmp_path / "case_b_n51_cutloci.vtk").read_text()
        assert "SCALARS flagged" in text and "SCALARS marked" in text
    if fmt == "csv":
        rows = list(csv.reader((tmp_path / "case_b_n51_cutloci.csv").open()))
        assert len(rows) - 1 == len(data["marked"])


@pytest.mark.parametrize("fmt", ["json", "csv", "vtk"])
def test_mesh_info_and_wind_sample(tmp_path, fmt):
    assert run(tmp_path, "mesh-info", "--case", "c", "--n", "41", "--format", fmt) == EXIT_OK
    assert (tmp_path / f"case_c_n41_mesh.{fmt}").exists()
    assert run(tmp_path, "wind-sample", "--case", "c", "--grid", "11", "--format", fmt) == EXIT_OK
    out = tmp_path / f"case_c_wind.{fmt}"
    if fmt == "csv":
        rows = list(csv.reader(out.open()))
        assert len(rows) == 122
        w = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
        assert np.hypot(w[:, 0], w[:, 1]).max() <= CASES["c"]().bounds()[0]
    assert out.exists()


def test_converge_case_a(tmp_path):
    assert run(tmp_path, "converge", "--case", "a", "--n", "51,101,201") == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "case_a_converge.csv").open()))
    assert [int(r["n"]) for r in rows] == [51, 101, 201]
    assert rows[0]["order"] == ""
    orders = [float(r["order"]) for r in rows[1:]]
    assert all(0.8 <= o <= 1.2 for o in orders), orders
    assert all(float(r["bound"]) > float(r["error"]) for r in rows)
    summary = read_json(tmp_path / "case_a_converge.json")
    assert summary["reference_n"] == 1001 and len(summary["rows"]) == 3


def test_identical_inputs_give_identical_files(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert main(["cutloci", "--case", "b", "--n", "51", "--epsilon", "0.02", "--format", "csv",
                     "--out-dir", str(d)]) == EXIT_OK
        assert main(["solve", "--case", "b", "--n", "51", "--out-dir", str(d)]) == EXIT_OK
        assert main(["trajectory", "--case", "b", "--n", "51", "--dest", "0.9,0.25", "--epsilon", "0.02",
                     "--out-dir", str(d)]) == EXIT_OK
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0].keys() == outs[1].keys() and len(outs[0]) >= 6
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], name


@pytest.mark.parametrize("argv", [
    ["solve", "--case", "a", "--n", "5"],
    ["solve", "--case", "a", "--n", "abc"],
    ["solve", "--case", "a", "--vbar", "0.4"],
    ["solve", "--case", "a", "--tol", "-1"],
    ["certify", "--case", "a", "--n", "31", "--dest", "0.5"],
    ["certify", "--case", "a", "--n", "31", "--dest", "1.5,0.5", "--epsilon", "0.01"],
    ["certify", "--case", "a", "--n", "31", "--dest", "0.02,0.5", "--epsilon", "0.01"],
    ["cutloci", "--case", "a", "--n", "31", "--epsilon", "lots"],
    ["cutloci", "--case", "a", "--n", "31", "--epsilon", "-0.1"],
    ["converge", "--case", "a", "--n", "101,51", "--reference-n", "201"],
    ["converge", "--case", "a", "--n", "51,x"],
    ["wind-sample", "--case", "a", "--grid", "1"],
    ["solve", "--scenario", "/nonexistent/scenario.json"],
])
def test_config_errors_exit_1(tmp_path, argv):
    assert run(tmp_path, *argv) == EXIT_CONFIG


def test_non_convergence_exits_3(tmp_path):
    sc = json.loads(builtin_scenario_path("b").read_text())
    sc.update(wind=CASES["b"]().to_dict(), max_sweeps=3, n=31)
    path = tmp_path / "slow.json"
    path.write_text(json.dumps(sc))
    assert run(tmp_path, "solve", "--scenario", str(path)) == EXIT_NONCONVERGENCE


@pytest.mark.parametrize("case", "abcd")
def test_builtin_scenarios_load(case):
    sc = load_scenario(builtin_scenario_path(case))
    sc.validate()
    assert sc.vbar == 1.0 and sc.x0 == (0.0, 0.5) and sc.r_K == 0.1
    assert sc.field.to_dict() == CASES[case]().to_dict()


def test_scenario_with_relative_wind_file(tmp_path):
    CASES["c"]().save(tmp_path / "w.json")
    (tmp_path / "s.json").write_text(json.dumps({"wind": "w.json", "n": 41, "name": "mine"}))
    sc = load_scenario(tmp_path / "s.json")
    assert sc.n == 41 and sc.name == "mine"
    assert sc.field.to_dict() == CASES["c"]().to_dict()


@pytest.mark.parametrize("cfg", [
    {"n": 41},
    {"wind": 3},
    {"wind": "missing.json"},
    {"wind": {"type": "nonsense"}},
    {"wind": {"type": "constant", "w": [0.0, 0.0]}, "n": "many"},
])
def test_invalid_scenarios(tmp_path, cfg):
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "s.json")


@pytest.mark.parametrize("override", [{"vbar": 0.5}, {"x0": [1.5, 0.5]}, {"r_K": 0.3},
                                      {"scheme": "sor"}, {"max_sweeps": 0}])
def test_scenario_invariants(tmp_path, override):
    cfg = {"wind": WindField.uniform((0.3, 0.4)).to_dict(), **override}
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "s.json").validate()


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "freeflight.cli", "mesh-info", "--n", "31",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["nodes"] > 0
