"""Hopf-Lax fixed-point solver for the arrival-time function on a TriMesh.

For an interior node ``x`` the update is

    (L v)(x) = min over y on the patch boundary of  v(y) + T_x(x - y),

where ``v`` is linear along each far edge and ``T_x(d)`` is the time to
cover displacement ``d`` in the wind frozen at ``x``.  The solution is the
fixed point of ``L`` with boundary values prescribed on the ball boundary.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline

from freeflight import _numerics as nx
from freeflight.kinematics import ModelViolation
from freeflight.trimesh import ORIGIN_BOUNDARY, TriMesh, _arc_interval
from freeflight.windfield import WindField


class NonConvergence(RuntimeError):
    """Raised when the iteration hits its sweep cap; carries the residual history."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


# ----------------------------------------------------------------------
# boundary data


@dataclass
class BoundaryOracle:
    """Arrival times on the ball boundary, as a smooth function of arc angle.

    ``angles`` are polar angles around ``x0`` measured from the start of the
    arc inside the domain, ``values`` the arrival times there.  A cubic
    spline through these samples provides ``g`` and its tangential
    derivative anywhere on the arc.
    """

    x0: tuple[float, float]
    r_K: float
    angles: np.ndarray
    values: np.ndarray
    method: str = "samples"
    _spline: CubicSpline = dc_field(init=False, repr=False)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        start, length = _arc_interval(self.x0, self.r_K)
        self._start = start
        self._full = length >= 2 * math.pi - 1e-12
        order = np.argsort(self.angles)
        a, v = self.angles[order], self.values[order]
        if self._full:
            a = np.append(a, a[0] + 2 * math.pi)
            v = np.append(v, v[0])
            self._spline = CubicSpline(a, v, bc_type="periodic")
        else:
            self._spline = CubicSpline(a, v)

    def arc_angle(self, xi) -> np.ndarray:
        d = np.asarray(xi, dtype=float) - np.asarray(self.x0)
        ang = np.arctan2(d[..., 1], d[..., 0])
        ang = np.mod(ang - self._start, 2 * math.pi)
        if not self._full:
            # points just outside the arc ends wrap to ~2 pi; pull them back
            ang = np.where(ang > math.pi + 0.5 * (self.angles.max()), ang - 2 * math.pi, ang)
        return ang

    def g(self, xi) -> np.ndarray:
        return self._spline(self.arc_angle(xi))

    def g_x(self, xi) -> np.ndarray:
        """Tangential gradient of ``g`` on the circle (a vector in the plane)."""
        xi = np.asarray(xi, dtype=float)
        ang = self.arc_angle(xi)
        dgda = self._spline(ang, 1)
        d = xi - np.asarray(self.x0)
        rad = np.linalg.norm(d, axis=-1)
        tangent = np.stack([-d[..., 1], d[..., 0]], axis=-1) / rad[..., None]
        return (dgda / rad)[..., None] * tangent

    def normal(self, xi) -> np.ndarray:
        d = np.asarray(xi, dtype=float) - np.asarray(self.x0)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def point(self, ang) -> np.ndarray:
        a = self._start + np.asarray(ang, dtype=float)
        return np.stack([self.x0[0] + self.r_K * np.cos(a), self.x0[1] + self.r_K * np.sin(a)], axis=-1)

    @classmethod
    def from_function(cls, mesh: TriMesh, func, method: str = "function") -> BoundaryOracle:
        """Sample ``func(points) -> times`` at the mesh's ball-boundary nodes."""
        nodes = mesh.origin_boundary_nodes()
        pts = mesh.points[nodes]
        start, _ = _arc_interval(mesh.x0, mesh.r_K)
        d = pts - np.asarray(mesh.x0)
        ang = np.mod(np.arctan2(d[:, 1], d[:, 0]) - start, 2 * math.pi)
        return cls(mesh.x0, mesh.r_K, ang, np.asarray(func(pts), dtype=float), method)

    @classmethod
    def zero_wind(cls, mesh: TriMesh, vbar: float = 1.0) -> BoundaryOracle:
        return cls.from_function(mesh, lambda p: np.linalg.norm(p - np.asarray(mesh.x0), axis=1) / vbar,
                                 "zero-wind closed form")

    @classmethod
    def constant_wind(cls, mesh: TriMesh, w, vbar: float = 1.0) -> BoundaryOracle:
        from freeflight.kinematics import travel_time
        w = np.asarray(w, dtype=float)
        return cls.from_function(mesh, lambda p: travel_time(p - np.asarray(mesh.x0), w, vbar),
                                 "constant-wind closed form")


# ----------------------------------------------------------------------
# value field


@dataclass
class Predecessor:
    value: float
    edge: tuple[int, int]
    s: float
    point: np.ndarray
    direction: np.ndarray


@dataclass
class ValueField:
    """Nodal arrival times with per-node Hopf-Lax minimizer records.

    ``pred_edge[i]`` is the far edge ``(a, b)`` carrying the minimizer of
    node ``i`` (``(-1, -1)`` on the ball boundary), ``pred_s[i]`` its
    parameter along ``a -> b``, ``pred_point[i]`` the minimizer itself and
    ``direction[i]`` the unit inflow direction ``x_i - y*``.  Ball-boundary
    nodes carry the outward normal as direction.
    """

    mesh: TriMesh
    field: WindField
    vbar: float
    u: np.ndarray
    pred_edge: np.ndarray
    pred_s: np.ndarray
    pred_point: np.ndarray
    direction: np.ndarray
    oracle: BoundaryOracle | None = None
    report: dict = dc_field(default_factory=dict)

    def eval(self, x) -> np.ndarray:
        return eval_value(self, self.mesh, x)

    def predecessor_value(self) -> np.ndarray:
        """Interpolated value at each node's minimizer (NaN on the boundary)."""
        a, b = self.pred_edge[:, 0], self.pred_edge[:, 1]
        ok = a >= 0
        out = np.full(len(self.u), np.nan)
        s = self.pred_s[ok]
        out[ok] = (1 - s) * self.u[a[ok]] + s * self.u[b[ok]]
        return out

    def to_dict(self) -> dict:
        return {
            "report": self.report,
            "x": self.mesh.points[:, 0].tolist(),
            "y": self.mesh.points[:, 1].tolist(),
            "u": self.u.tolist(),
            "pred_edge": self.pred_edge.tolist(),
            "pred_s": self.pred_s.tolist(),
            "direction": self.direction.tolist(),
        }


def eval_value(values: ValueField, mesh: TriMesh, x) -> np.ndarray:
    """Piecewise-linear interpolation of nodal values at ``x``."""
    x = np.asarray(x, dtype=float)
    if mesh.r_K > 0:
        d = np.linalg.norm(x.reshape(-1, 2) - np.asarray(mesh.x0), axis=1)
        if (d < mesh.r_K).any():
            raise ValueError("query point lies inside the origin ball")
    return mesh.interpolate(values.u, x)


# ----------------------------------------------------------------------
# update and solve


def _prepare(mesh: TriMesh, field: WindField, vbar: float):
    c0, _ = field.bounds()
    if not c0 < vbar:
        raise ModelViolation(f"wind bound {c0} is not below airspeed {vbar}")
    wind = np.ascontiguousarray(field.eval_wind(mesh.points))
    lo, hi = mesh.points.min(axis=0), mesh.points.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    sentinel = 10.0 * diam / (vbar - c0)
    fe_ptr, fe = mesh.far_edges
    return wind, sentinel, fe_ptr, fe


def hopf_lax_update(mesh: TriMesh, field: WindField, vbar: float, values, node: int,
                    sentinel: float | None = None) -> tuple[float, Predecessor | None]:
    """Evaluate the Hopf-Lax update at one node from nodal values ``values``."""
    u = np.ascontiguousarray(values.u if isinstance(values, ValueField) else values, dtype=float)
    fe_ptr, fe = mesh.far_edges
    if fe_ptr[node + 1] == fe_ptr[node]:
        raise ValueError(f"node {node} has an empty patch")
    wind = np.ascontiguousarray(field.eval_wind(mesh.points[node])[None].repeat(mesh.n_nodes, 0))
    if sentinel is None:
        sentinel = 1e300
    val, e, s = nx.node_update(node, u, mesh.points, fe_ptr, fe, wind, vbar, sentinel)
    if e < 0:
        return float(val), None
    a, b = fe[e]
    y = (1 - s) * mesh.points[a] + s * mesh.points[b]
    d = mesh.points[node] - y
    return float(val), Predecessor(float(val), (int(a), int(b)), float(s), y, d / np.linalg.norm(d))


def solve(mesh: TriMesh, field: WindField, vbar: float, oracle: BoundaryOracle,
          tol: float = 1e-10, scheme: str = "jacobi", max_sweeps: int = 100_000,
          active_set: bool = True, callback=None) -> ValueField:
    """Fixed-point iteration of the Hopf-Lax update.

    Starts from ``g`` on the ball boundary and a finite sentinel elsewhere,
    so the iterates decrease monotonically.  ``scheme`` is ``"jacobi"``
    (all nodes read the previous iterate) or ``"gauss_seidel"`` (in-place,
    nodes visited in ascending value order, re-sorted every 10 sweeps).
    With ``active_set`` the Jacobi sweeps only revisit nodes next to a node
    that moved by more than the threshold; a final full sweep verifies the
    fixed point and restarts the iteration if it is not yet reached.
    ``callback(sweep, u)`` is called after every sweep.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if scheme not in ("jacobi", "gauss_seidel"):
        raise ValueError(f"unknown scheme {scheme!r}")
    t_start = time.perf_counter()
    wind, sentinel, fe_ptr, fe = _prepare(mesh, field, vbar)
    pts = mesh.points
    bnodes = np.flatnonzero(mesh.kind == ORIGIN_BOUNDARY)
    fixed = np.zeros(mesh.n_nodes, dtype=np.bool_)
    fixed[bnodes] = True
    free = np.flatnonzero(~fixed).astype(np.int64)
    u = np.full(mesh.n_nodes, sentinel)
    u[bnodes] = oracle.g(pts[bnodes])
    nbr_ptr, nbr = mesh.neighbors
    flag = np.zeros(mesh.n_nodes, dtype=np.int64)

    history: list[float] = []
    sweeps = 0
    updates = 0
    active = free
    order = free[np.argsort(u[free], kind="stable")]

    def step(maxch):
        nonlocal sweeps
        sweeps += 1
        history.append(maxch)
        if callback is not None:
            callback(sweeps, u)
        if sweeps >= max_sweeps:
            raise NonConvergence(f"no convergence in {max_sweeps} sweeps", history)

    while True:
        if scheme == "jacobi":
            while len(active):
                thr = tol * float(np.max(np.abs(u)))
                nxt, maxch = nx.jacobi_sweep(active, u, pts, fe_ptr, fe, wind, vbar, sentinel,
                                             nbr_ptr, nbr, fixed, thr, flag)
                updates += len(active)
                step(maxch)
                active = nxt if active_set else (free if maxch > thr else nxt[:0])
        else:
            while True:
                if sweeps % 10 == 0:
                    order = free[np.argsort(u[free], kind="stable")]
                thr = tol * float(np.max(np.abs(u)))
                maxch = nx.gauss_seidel_sweep(order, u, pts, fe_ptr, fe, wind, vbar, sentinel)
                updates += len(order)
                step(maxch)
                if maxch <= thr:
                    break
        # verification sweep; it also records the minimizers
        vals, edges, ss = nx.record_pass(free, u, pts, fe_ptr, fe, wind, vbar, sentinel)
        updates += len(free)
        thr = tol * float(np.max(np.abs(u)))
        diff = np.abs(vals - u[free])
        residual = float(diff.max()) if len(free) else 0.0
        if residual <= thr:
            break
        moved = free[diff > thr]
        u[free] = np.minimum(u[free], vals)
        step(residual)
        active = _expand(moved, nbr_ptr, nbr, fixed)

    if (u[free] >= sentinel).any():
        raise NonConvergence("some nodes were never reached from the boundary", history)

    pred_edge = np.full((mesh.n_nodes, 2), -1, dtype=np.int64)
    pred_s = np.zeros(mesh.n_nodes)
    pred_point = pts.copy()
    direction = np.zeros((mesh.n_nodes, 2))
    ab = fe[edges]
    pred_edge[free] = ab
    pred_s[free] = ss
    pred_point[free] = (1 - ss)[:, None] * pts[ab[:, 0]] + ss[:, None] * pts[ab[:, 1]]
    d = pts[free] - pred_point[free]
    direction[free] = d / np.linalg.norm(d, axis=1, keepdims=True)
    direction[bnodes] = oracle.normal(pts[bnodes])

    report = {
        "scheme": scheme,
        "tol": tol,
        "sweeps": sweeps,
        "node_updates": int(updates),
        "residual": residual,
        "threshold": thr,
        "sentinel": sentinel,
        "seconds": time.perf_counter() - t_start,
    }
    vf = ValueField(mesh, field, vbar, u, pred_edge, pred_s, pred_point, direction, oracle, report)
    vf.report["history"] = history
    return vf


def _expand(nodes, nbr_ptr, nbr, fixed):
    mark = np.zeros(len(fixed), dtype=bool)
    mark[nodes] = True
    for i in nodes:
        mark[nbr[nbr_ptr[i]:nbr_ptr[i + 1]]] = True
    mark &= ~fixed
    return np.flatnonzero(mark).astype(np.int64)
