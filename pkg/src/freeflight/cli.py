"""Command-line interface.

Every subcommand reads a scenario (``--scenario file.json`` or a built-in
``--case a|b|c|d``), writes its artifacts to ``--out-dir`` in the chosen
``--format`` and prints a short JSON summary.  Exit codes: 0 success,
1 configuration error, 2 unsafe destination, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from freeflight.characteristics import (BacktrackError, IntegrationError, backtrack,
                                        shoot_to_destination)
from freeflight.error_analysis import (aposteriori_error, apriori_bound, convergence_study,
                                       hessian_sup_estimate, solve_case)
from freeflight.hjb import NonConvergence
from freeflight.kinematics import ModelViolation
from freeflight.singularity import (DEFAULT_ANGLE, certify_destination, detect_singular_simplices,
                                    trust_region)
from freeflight.trimesh import build_mesh
from freeflight.windfield import WindField, sample_grid

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSAFE = 2
EXIT_NONCONVERGENCE = 3


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    field: WindField
    vbar: float = 1.0
    x0: tuple[float, float] = (0.0, 0.5)
    r_K: float = 0.1
    n: int = 101
    tol: float = 1e-10
    scheme: str = "jacobi"
    name: str = ""
    max_sweeps: int = 100_000

    def validate(self) -> None:
        c0, _ = self.field.bounds()
        if not self.vbar > c0:
            raise ConfigError(f"airspeed {self.vbar} must exceed the wind bound {c0}")
        if not all(0.0 <= c <= 1.0 for c in self.x0):
            raise ConfigError("x0 must lie in the unit square")
        if not 0.0 < self.r_K < 0.25:
            raise ConfigError("r_K must lie in (0, 0.25)")
        if self.n < 11:
            raise ConfigError("grid resolution n must be at least 11")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be positive")
        if self.scheme not in ("jacobi", "gauss_seidel"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")


def builtin_scenario_path(case: str) -> Path:
    return Path(str(resources.files("freeflight") / "scenarios" / f"case_{case}.json"))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    wind = cfg.get("wind")
    try:
        if isinstance(wind, str):
            field = WindField.load(path.parent / wind)
        elif isinstance(wind, dict):
            field = WindField.from_dict(wind)
        else:
            raise ConfigError("scenario needs a 'wind' entry (file name or inline object)")
        sc = Scenario(field=field, vbar=float(cfg.get("vbar", 1.0)),
                      x0=tuple(float(c) for c in cfg.get("x0", (0.0, 0.5))),
                      r_K=float(cfg.get("r_K", 0.1)), n=int(cfg.get("n", 101)),
                      tol=float(cfg.get("tol", 1e-10)), scheme=cfg.get("scheme", "jacobi"),
                      name=cfg.get("name", path.stem), max_sweeps=int(cfg.get("max_sweeps", 100_000)))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid scenario {path}: {exc}") from exc
    return sc


# ----------------------------------------------------------------------
# output helpers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _parse_point(text: str) -> np.ndarray:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse point {text!r}") from exc
    if len(parts) != 2:
        raise ConfigError(f"point {text!r} needs two comma-separated coordinates")
    return np.array(parts)


def _solve_report(values) -> dict:
    rep = {k: v for k, v in values.report.items() if k not in ("seconds", "history")}
    rep["history_length"] = len(values.report.get("history", []))
    return rep


# ----------------------------------------------------------------------
# subcommands


def _problem(sc: Scenario):
    return solve_case(sc.field, sc.n, sc.vbar, sc.tol, sc.x0, sc.r_K, sc.scheme, max_sweeps=sc.max_sweeps)


def _epsilon(sc: Scenario, prob, spec: str) -> tuple[float, str]:
    if spec not in ("auto", "apriori"):
        try:
            eps = float(spec)
        except ValueError as exc:
            raise ConfigError(f"--epsilon must be auto, apriori or a number, got {spec!r}") from exc
        if eps < 0:
            raise ConfigError("--epsilon must be non-negative")
        return eps, "given"
    if spec == "auto":
        fine = solve_case(sc.field, 2 * sc.n - 1, sc.vbar, sc.tol, sc.x0, sc.r_K, sc.scheme,
                          max_sweeps=sc.max_sweeps)
        return aposteriori_error(prob.values, fine.values)["all"], f"a-posteriori vs n={2 * sc.n - 1}"
    c0, c1 = sc.field.bounds()
    hs = hessian_sup_estimate(prob.values, prob.mesh)
    eps = apriori_bound(prob.mesh.h, prob.mesh.theta, hs, c0, c1, sc.vbar, float(np.abs(prob.values.u).max()))
    return eps, "a-priori"


def cmd_solve(args, sc: Scenario, out: Path) -> int:
    prob = _problem(sc)
    v, m = prob.values, prob.mesh
    d = v.direction
    u = v.u
    summary = {"scenario": sc.name, "n": sc.n, "nodes": m.n_nodes, "max_u": float(u.max()),
               "min_u": float(u.min()), "solver": _solve_report(v)}
    stem = out / f"{sc.name}_n{sc.n}_values"
    if args.format == "json":
        data = v.to_dict()
        data["report"] = _solve_report(v)
        _write_json(stem.with_suffix(".json"), data)
    elif args.format == "csv":
        _write_csv(stem.with_suffix(".csv"), ["x", "y", "u", "pred_dx", "pred_dy"],
                   np.column_stack([m.points, u, d]))
    else:
        m.write_vtk(stem.with_suffix(".vtk"), point_data={"u": u, "inflow": d})
    _write_json(out / f"{sc.name}_n{sc.n}_solve_summary.json", summary)
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return EXIT_OK


def cmd_trajectory(args, sc: Scenario, out: Path) -> int:
    dest = _parse_point(args.dest)
    prob = _problem(sc)
    traj = backtrack(prob.values, prob.mesh, dest)
    if args.method == "shoot":
        traj = shoot_to_destination(prob.oracle, sc.field, sc.vbar, dest, xi_guess=traj.boundary_point)
    eps, source = _epsilon(sc, prob, args.epsilon)
    flagged = detect_singular_simplices(prob.values, prob.mesh, args.angle_threshold)
    region = trust_region(prob.values, prob.mesh, flagged, eps, args.angle_threshold)
    cert = certify_destination(prob.values, prob.mesh, region, dest)
    summary = {"destination": dest, "method": traj.method, "arrival_time": traj.arrival_time,
               "path_time": float(traj.times[-1]), "boundary_point": traj.boundary_point,
               "safe": cert.safe, "eps": eps, "eps_source": source, "points": len(traj.points)}
    stem = out / f"{sc.name}_n{sc.n}_trajectory_{args.method}"
    if args.format == "vtk":
        _write_polyline_vtk(stem.with_suffix(".vtk"), traj)
    else:
        _write_csv(stem.with_suffix(".csv"), ["t", "x", "y"], traj.to_rows())
    _write_json(stem.with_name(stem.name + "_summary.json"), summary)
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return EXIT_OK


def _write_polyline_vtk(path: Path, traj) -> None:
    n = len(traj.points)
    lines = ["# vtk DataFile Version 3.0", "trajectory", "ASCII", "DATASET POLYDATA",
             f"POINTS {n} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in traj.points]
    lines.append(f"LINES 1 {n + 1}")
    lines.append(" ".join([str(n)] + [str(i) for i in range(n)]))
    lines += [f"POINT_DATA {n}", "SCALARS t double 1", "LOOKUP_TABLE default"]
    lines += [f"{t:.17g}" for t in traj.times]
    path.write_text("\n".join(lines) + "\n")


def cmd_cutloci(args, sc: Scenario, out: Path) -> int:
    prob = _problem(sc)
    eps, source = _epsilon(sc, prob, args.epsilon)
    flagged = detect_singular_simplices(prob.values, prob.mesh, args.angle_threshold)
    region = trust_region(prob.values, prob.mesh, flagged, eps, args.angle_threshold)
    data = region.to_dict()
    data["eps_source"] = source
    stem = out / f"{sc.name}_n{sc.n}_cutloci"
    if args.format == "vtk":
        flag = np.zeros(prob.mesh.n_triangles)
        flag[flagged] = 1.0
        prob.mesh.write_vtk(stem.with_suffix(".vtk"), point_data={"u": prob.values.u},
                            cell_data={"flagged": flag, "marked": region.marked_triangles.astype(float)})
    elif args.format == "csv":
        is_flagged = set(flagged.tolist())
        _write_csv(stem.with_suffix(".csv"), ["triangle", "flagged", "marked"],
                   [(int(t), int(t in is_flagged), 1) for t in region.marked_ids])
    _write_json(stem.with_suffix(".json"), data)
    summary = {"flagged": len(flagged), "marked": int(region.marked_triangles.sum()), "eps": eps,
               "eps_source": source}
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return EXIT_OK


def cmd_certify(args, sc: Scenario, out: Path) -> int:
    dest = _parse_point(args.dest)
    prob = _problem(sc)
    eps, source = _epsilon(sc, prob, args.epsilon)
    flagged = detect_singular_simplices(prob.values, prob.mesh, args.angle_threshold)
    region = trust_region(prob.values, prob.mesh, flagged, eps, args.angle_threshold)
    cert = certify_destination(prob.values, prob.mesh, region, dest)
    report = cert.to_dict()
    report.update({"destination": dest, "eps_source": source, "flagged": len(flagged)})
    if cert.safe and args.cross_check:
        shot = shoot_to_destination(prob.oracle, sc.field, sc.vbar, dest,
                                    xi_guess=cert.trajectory.boundary_point)
        report["shooting_arrival_time"] = shot.arrival_time
        report["arrival_time_gap"] = abs(shot.arrival_time - cert.arrival_time)
    _write_json(out / f"{sc.name}_n{sc.n}_certify.json", report)
    print(json.dumps(_jsonable(report), sort_keys=True))
    return EXIT_OK if cert.safe else EXIT_UNSAFE


def cmd_converge(args, sc: Scenario, out: Path) -> int:
    try:
        ns = [int(v) for v in args.n_list.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse --n {args.n_list!r}") from exc
    stem = out / f"{sc.name}_converge"
    finest = {}

    def keep_finest(prob, reference, rep):
        finest["problem"], finest["reference"] = prob, reference

    try:
        rows = convergence_study(sc.field, ns, args.reference_n, sc.vbar, sc.tol, x0=sc.x0, r_K=sc.r_K,
                                 progress=lambda msg: print(msg, file=sys.stderr),
                                 on_row=keep_finest if args.format == "vtk" else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    table = [(r.n, r.h, r.theta, r.error, r.apriori, "" if r.order is None else r.order) for r in rows]
    _write_csv(stem.with_suffix(".csv"), ["n", "h", "theta", "error", "bound", "order"], table)
    summary = {"scenario": sc.name, "reference_n": args.reference_n,
               "rows": [{k: v for k, v in r.to_dict().items() if k != "solve_seconds"} for r in rows]}
    if args.format == "json":
        _write_json(stem.with_suffix(".json"), summary)
    elif args.format == "vtk":
        prob = finest["problem"]
        err = aposteriori_error(prob.values, finest["reference"].values)["nodes"]
        prob.mesh.write_vtk(stem.with_suffix(".vtk"), point_data={"u": prob.values.u, "error": err})
    print(json.dumps(_jsonable({"orders": [r.order for r in rows[1:]]}), sort_keys=True))
    return EXIT_OK


def cmd_mesh_info(args, sc: Scenario, out: Path) -> int:
    mesh = build_mesh(sc.n, sc.x0, sc.r_K)
    info = mesh.info()
    stem = out / f"{sc.name}_n{sc.n}_mesh"
    if args.format == "vtk":
        mesh.write_vtk(stem.with_suffix(".vtk"), point_data={"kind": mesh.kind})
    elif args.format == "json":
        _write_json(stem.with_suffix(".json"), mesh.to_dict())
    else:
        _write_csv(stem.with_suffix(".csv"), ["x", "y", "kind"],
                   [(x, y, int(k)) for (x, y), k in zip(mesh.points, mesh.kind)])
    print(json.dumps(_jsonable(info), sort_keys=True))
    return EXIT_OK


def cmd_wind_sample(args, sc: Scenario, out: Path) -> int:
    if args.grid < 2:
        raise ConfigError("--grid must be at least 2")
    rows = sample_grid(sc.field, args.grid)
    stem = out / f"{sc.name}_wind"
    if args.format == "json":
        _write_json(stem.with_suffix(".json"), {"columns": ["x", "y", "wx", "wy"], "rows": rows})
    elif args.format == "csv":
        _write_csv(stem.with_suffix(".csv"), ["x", "y", "wx", "wy"], rows)
    else:
        _write_wind_vtk(stem.with_suffix(".vtk"), rows, args.grid)
    c0, c1 = sc.field.bounds()
    print(json.dumps({"points": len(rows), "c0": c0, "c1": c1}, sort_keys=True))
    return EXIT_OK


def _write_wind_vtk(path: Path, rows, n: int) -> None:
    d = 1.0 / (n - 1)
    lines = ["# vtk DataFile Version 3.0", "wind", "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {n} {n} 1", "ORIGIN 0 0 0", f"SPACING {d:.17g} {d:.17g} 1",
             f"POINT_DATA {n * n}", "VECTORS wind double"]
    lines += [f"{wx:.17g} {wy:.17g} 0" for wx, wy in rows[:, 2:4]]
    path.write_text("\n".join(lines) + "\n")


COMMANDS = {
    "solve": cmd_solve,
    "trajectory": cmd_trajectory,
    "cutloci": cmd_cutloci,
    "certify": cmd_certify,
    "converge": cmd_converge,
    "mesh-info": cmd_mesh_info,
    "wind-sample": cmd_wind_sample,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freeflight", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--case", choices=["a", "b", "c", "d"], help="built-in test case")
    common.add_argument("--n", help="grid resolution (converge: comma-separated list)")
    common.add_argument("--tol", type=float, help="relative fixed-point tolerance")
    common.add_argument("--scheme", choices=["jacobi", "gauss_seidel"])
    common.add_argument("--vbar", type=float, help="airspeed")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--format", choices=["csv", "json", "vtk"], default="json")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("solve", parents=[common], help="solve for arrival times")
    t = sub.add_parser("trajectory", parents=[common], help="optimal path to a destination")
    t.add_argument("--dest", required=True, help="destination x,y")
    t.add_argument("--method", choices=["backtrack", "shoot"], default="backtrack")
    t.add_argument("--angle-threshold", type=float, default=DEFAULT_ANGLE)
    t.add_argument("--epsilon", default="auto", help="auto, apriori or a number")
    c = sub.add_parser("cutloci", parents=[common], help="singular simplices and trust region")
    c.add_argument("--angle-threshold", type=float, default=DEFAULT_ANGLE)
    c.add_argument("--epsilon", default="auto", help="auto, apriori or a number")
    z = sub.add_parser("certify", parents=[common], help="check a destination against the trust region")
    z.add_argument("--dest", required=True, help="destination x,y")
    z.add_argument("--angle-threshold", type=float, default=DEFAULT_ANGLE)
    z.add_argument("--epsilon", default="auto", help="auto, apriori or a number")
    z.add_argument("--no-cross-check", dest="cross_check", action="store_false",
                   help="skip the characteristic shooting comparison")
    v = sub.add_parser("converge", parents=[common], help="convergence study against a fine reference")
    v.add_argument("--reference-n", type=int, default=1001)
    sub.add_parser("mesh-info", parents=[common], help="mesh quality metrics")
    w = sub.add_parser("wind-sample", parents=[common], help="dump the wind on a grid")
    w.add_argument("--grid", type=int, default=51)
    return p


def scenario_from_args(args) -> Scenario:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        sc = load_scenario(builtin_scenario_path(args.case or "a"))
    if args.command == "converge":
        args.n_list = args.n or "51,101,201"
    elif args.n is not None:
        try:
            sc.n = int(args.n)
        except ValueError as exc:
            raise ConfigError(f"--n must be an integer, got {args.n!r}") from exc
    if args.tol is not None:
        sc.tol = args.tol
    if args.scheme is not None:
        sc.scheme = args.scheme
    if args.vbar is not None:
        sc.vbar = args.vbar
    sc.validate()
    return sc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sc = scenario_from_args(args)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, sc, out)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, ModelViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BacktrackError, IntegrationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
