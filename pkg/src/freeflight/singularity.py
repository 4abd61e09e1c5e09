"""Cut-locus detection from the predecessor field and the 2-epsilon trust region.

Where optimal paths from different directions meet, the inflow directions
stored by the solver change abruptly across a triangle.  Such triangles are
flagged.  The trust region widens the flagged set by a temporal band of
depth ``2 eps`` measured along predecessor chains (``eps`` being the
discretization error), plus every node whose chain runs through a flagged
triangle.  Destinations whose containing triangle and backtracked path avoid
the trust region have a unique globally optimal path approximated by the
backtrack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from freeflight.characteristics import Trajectory, backtrack
from freeflight.hjb import ValueField
from freeflight.trimesh import ORIGIN_BOUNDARY, TriMesh

DEFAULT_ANGLE = 90.0


@dataclass
class TrustRegion:
    flagged: np.ndarray
    eps: float
    marked_nodes: np.ndarray
    marked_triangles: np.ndarray
    depth: np.ndarray
    downstream: np.ndarray
    angle_threshold: float = DEFAULT_ANGLE
    params: dict = dc_field(default_factory=dict)

    @property
    def marked_ids(self) -> np.ndarray:
        return np.flatnonzero(self.marked_triangles)

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "angle_threshold": self.angle_threshold,
            "flagged": self.flagged.tolist(),
            "marked": self.marked_ids.tolist(),
            "marked_nodes": int(self.marked_nodes.sum()),
            **self.params,
        }


@dataclass
class Certificate:
    safe: bool
    eps: float
    arrival_time: float
    nearest_marked_distance: float
    reason: str
    trajectory: Trajectory | None = None

    def to_dict(self) -> dict:
        d = {
            "safe": self.safe,
            "eps": self.eps,
            "arrival_time": self.arrival_time,
            "nearest_marked_distance": self.nearest_marked_distance,
            "reason": self.reason,
        }
        if self.trajectory is not None:
            d["boundary_point"] = self.trajectory.boundary_point.tolist()
            d["path_points"] = len(self.trajectory.points)
        return d


# ----------------------------------------------------------------------
# detection


def _pair_cosines(values: ValueField, mesh: TriMesh):
    d = values.direction[mesh.triangles]
    pairs = ((0, 1), (1, 2), (2, 0))
    cos = np.stack([np.sum(d[:, i] * d[:, j], axis=1) for i, j in pairs], axis=1)
    return d, pairs, cos


def max_inflow_angle(values: ValueField, mesh: TriMesh) -> np.ndarray:
    """Largest pairwise angle (degrees) between nodal inflow directions per triangle."""
    _, _, cos = _pair_cosines(values, mesh)
    return np.degrees(np.arccos(np.clip(cos.min(axis=1), -1.0, 1.0)))


def detect_singular_simplices(values: ValueField, mesh: TriMesh, angle_threshold: float = DEFAULT_ANGLE,
                              converging_only: bool = True) -> np.ndarray:
    """Triangles whose nodal inflow directions spread by more than the threshold.

    Triangles touching the ball boundary are exempt (their boundary nodes
    carry the launch normal, not a solver minimizer).  With
    ``converging_only`` a flag is kept only if the widest pair of directions
    points towards each other across the triangle, i.e. paths collide there
    and the arrival time is locally maximal along them; diverging fans are
    discarded.
    """
    d, pairs, cos = _pair_cosines(values, mesh)
    ang = np.degrees(np.arccos(np.clip(cos.min(axis=1), -1.0, 1.0)))
    flag = ang > angle_threshold
    flag &= ~(mesh.kind[mesh.triangles] == ORIGIN_BOUNDARY).any(axis=1)
    if converging_only:
        k = np.argmin(cos, axis=1)
        I = np.array([p[0] for p in pairs])[k]
        J = np.array([p[1] for p in pairs])[k]
        rows = np.arange(len(k))
        xi = mesh.points[mesh.triangles[rows, I]]
        xj = mesh.points[mesh.triangles[rows, J]]
        conv = np.sum((xj - xi) * (d[rows, I] - d[rows, J]), axis=1) > 0
        flag &= conv
    return np.flatnonzero(flag)


def detect_by_divergence(values: ValueField, mesh: TriMesh, scale: float = 1.0) -> np.ndarray:
    """Triangles where the P1 divergence of the inflow field is below ``-scale / h``."""
    P = mesh.points[mesh.triangles]
    d = values.direction[mesh.triangles]
    area2 = 2.0 * mesh.areas
    # gradients of the barycentric coordinates
    grads = np.stack([
        np.stack([P[:, 1, 1] - P[:, 2, 1], P[:, 2, 0] - P[:, 1, 0]], axis=1),
        np.stack([P[:, 2, 1] - P[:, 0, 1], P[:, 0, 0] - P[:, 2, 0]], axis=1),
        np.stack([P[:, 0, 1] - P[:, 1, 1], P[:, 1, 0] - P[:, 0, 0]], axis=1),
    ], axis=1) / area2[:, None, None]
    div = np.sum(d * grads, axis=(1, 2))
    flag = div < -scale / mesh.h
    flag &= ~(mesh.kind[mesh.triangles] == ORIGIN_BOUNDARY).any(axis=1)
    return np.flatnonzero(flag)


# ----------------------------------------------------------------------
# trust region


def trust_region(values: ValueField, mesh: TriMesh, flagged, eps: float,
                 angle_threshold: float = DEFAULT_ANGLE) -> TrustRegion:
    """Temporal band of depth ``2 eps`` around the flagged triangles.

    Backward part: starting with budget ``2 eps`` at every node of a flagged
    triangle, budgets flow to the lower-valued endpoints of each node's
    predecessor edge, reduced by the value drop.  Endpoints reached from a node with
    positive budget are marked.  Forward part: a node is marked when the
    dominant endpoint of its predecessor edge is a flagged-triangle node or
    already marked downstream.  Every triangle with a marked vertex is
    marked.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    flagged = np.asarray(flagged, dtype=np.int64)
    u = values.u
    seeds = np.zeros(mesh.n_nodes, dtype=bool)
    seeds[mesh.triangles[flagged].ravel()] = True
    order_desc = np.argsort(-u, kind="stable")
    order_asc = order_desc[::-1].copy()
    budget, depth = _backward_band(order_desc, u, values.pred_edge, seeds, 2.0 * eps)
    back = budget > -np.inf
    dominant = np.where(values.pred_s < 0.5, values.pred_edge[:, 0], values.pred_edge[:, 1])
    down = _downstream(order_asc, dominant, seeds)
    marked_nodes = back | down | seeds
    marked_tri = marked_nodes[mesh.triangles].any(axis=1)
    return TrustRegion(flagged, float(eps), marked_nodes, marked_tri, depth, down & ~back,
                       angle_threshold, {"band_nodes": int(back.sum()), "downstream_nodes": int(down.sum())})


@njit(cache=True)
def _backward_band(order, u, pred_edge, seeds, budget0):
    n = u.shape[0]
    budget = np.full(n, -np.inf)
    depth = np.full(n, np.nan)
    for i in range(n):
        if seeds[i]:
            budget[i] = budget0
            depth[i] = 0.0
    for k in range(n):
        i = order[k]
        b = budget[i]
        if b <= 0.0 or pred_edge[i, 0] < 0:
            continue
        for e in range(2):
            q = pred_edge[i, e]
            drop = u[i] - u[q]
            if drop <= 0.0:
                continue
            if b - drop > budget[q]:
                budget[q] = b - drop
            dq = depth[i] + drop
            if math.isnan(depth[q]) or dq < depth[q]:
                depth[q] = dq
    return budget, depth


@njit(cache=True)
def _downstream(order, dominant, seeds):
    n = order.shape[0]
    down = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        i = order[k]
        q = dominant[i]
        if q >= 0 and (seeds[q] or down[q]):
            down[i] = True
    return down


# ----------------------------------------------------------------------
# certification


def certify_destination(values: ValueField, mesh: TriMesh, region: TrustRegion, x_d) -> Certificate:
    """Safe iff the destination's triangle and its backtracked path avoid the trust region."""
    x_d = np.asarray(x_d, dtype=float)
    if mesh.r_K > 0 and np.linalg.norm(x_d - np.asarray(mesh.x0)) < mesh.r_K:
        raise ValueError("destination lies inside the origin ball")
    tri, _ = mesh.locate(x_d)
    if tri[0] < 0:
        raise ValueError(f"destination {x_d.tolist()} is outside the meshed domain")
    arrival = float(mesh.interpolate(values.u, x_d[None])[0])
    marked = region.marked_ids
    if len(marked):
        cent = mesh.points[mesh.triangles[marked]].mean(axis=1)
        nearest = float(cKDTree(cent).query(x_d)[0])
    else:
        nearest = math.inf
    if region.marked_triangles[tri[0]]:
        return Certificate(False, region.eps, arrival, nearest, "destination triangle is in the trust region")
    traj = backtrack(values, mesh, x_d)
    pts = _densify(traj.points, 0.25 * mesh.h)
    ptri, _ = mesh.locate(pts)
    ptri = ptri[ptri >= 0]
    if region.marked_triangles[ptri].any():
        traj.safe = False
        return Certificate(False, region.eps, arrival, nearest,
                           "backtracked path crosses the trust region", traj)
    traj.safe = True
    return Certificate(True, region.eps, arrival, nearest, "clear of the trust region", traj)


def _densify(pts, spacing):
    out = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        k = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        s = np.arange(1, k + 1)[:, None] / k
        out.append(a + s * (b - a))
    return np.vstack(out)
