"""Triangulations of the unit square minus the origin ball.

The mesh starts from an ``n x n`` uniform grid.  Grid points inside (or
within half a grid spacing of) the ball ``B_r(x0)`` are removed, equally
spaced nodes are inserted exactly on the part of the circle that lies in
the square, and the point set is Delaunay-triangulated.  Cocircular
quadrilaterals (every grid cell) are resolved deterministically by
choosing the diagonal through the lexicographically smallest corner, so a
plain grid gets all of its diagonals pointing up and to the right.  Nodes
in a thin band around the circle are then relaxed to improve the
worst-case aspect ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit
from scipy.spatial import Delaunay

INTERIOR = 0
ORIGIN_BOUNDARY = 1
OUTER_BOUNDARY = 2

_BOX_TOL = 1e-12


@dataclass(eq=False)
class TriMesh:
    """Conforming triangulation with node classification and quality metrics.

    Attributes
    ----------
    points : (N, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    kind : (N,) int8 array, one of INTERIOR, ORIGIN_BOUNDARY, OUTER_BOUNDARY
    x0, r_K : origin and ball radius (``r_K = 0`` for a mesh without ball)
    spacing : grid spacing ``1 / (n - 1)``
    """

    points: np.ndarray
    triangles: np.ndarray
    kind: np.ndarray
    x0: tuple[float, float] = (0.0, 0.5)
    r_K: float = 0.0
    spacing: float = 0.0
    n: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    # ------------------------------------------------------------------
    # quality

    @cached_property
    def _tri_geometry(self):
        P = self.points[self.triangles]
        e = np.linalg.norm(P[:, [1, 2, 0]] - P, axis=2)
        cross = ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
                 - (P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0]))
        diam = e.max(axis=1)
        return 0.5 * cross, diam, cross / diam

    @property
    def areas(self) -> np.ndarray:
        return self._tri_geometry[0]

    @property
    def diameters(self) -> np.ndarray:
        return self._tri_geometry[1]

    @property
    def h(self) -> float:
        """Maximum triangle diameter."""
        return float(self.diameters.max())

    @property
    def h_perp(self) -> float:
        """Minimum triangle altitude."""
        return float(self._tri_geometry[2].min())

    @property
    def theta(self) -> float:
        return self.h / self.h_perp

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def info(self) -> dict:
        return {
            "n": self.n,
            "nodes": self.n_nodes,
            "triangles": self.n_triangles,
            "h": self.h,
            "h_perp": self.h_perp,
            "theta": self.theta,
            "origin_boundary_nodes": int((self.kind == ORIGIN_BOUNDARY).sum()),
            "x0": list(self.x0),
            "r_K": self.r_K,
        }

    # ------------------------------------------------------------------
    # adjacency

    @cached_property
    def far_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR ``(ptr, edges)``: for node i, ``edges[ptr[i]:ptr[i+1]]`` are the
        edges opposite i in its incident triangles, i.e. the patch boundary."""
        t = self.triangles
        owner = t.ravel()
        opp = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        order = np.argsort(owner, kind="stable")
        ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(ptr, owner + 1, 1)
        return np.cumsum(ptr), np.ascontiguousarray(opp[order].astype(np.int64))

    @cached_property
    def node_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        owner = self.triangles.ravel()
        order = np.argsort(owner, kind="stable")
        ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(ptr, owner + 1, 1)
        return np.cumsum(ptr), (order // 3).astype(np.int64)

    def _edge_keys(self) -> np.ndarray:
        t = self.triangles
        a = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        b = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
        return np.minimum(a, b) * self.n_nodes + np.maximum(a, b)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted node pairs."""
        k = np.unique(self._edge_keys())
        return np.column_stack([k // self.n_nodes, k % self.n_nodes])

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        e = self.edges
        both = np.concatenate([e, e[:, ::-1]])
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        ptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(ptr, both[:, 0] + 1, 1)
        return np.cumsum(ptr), np.ascontiguousarray(both[:, 1].astype(np.int64))

    def edge_triangle_counts(self) -> np.ndarray:
        """Number of triangles sharing each edge of :attr:`edges`."""
        return np.unique(self._edge_keys(), return_counts=True)[1]

    @cached_property
    def vertex_adjacent_triangles(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR of triangles sharing at least one vertex with each triangle."""
        nptr, ntri = self.node_triangles
        T = self.n_triangles
        rows, cols = [], []
        for k in range(3):
            v = self.triangles[:, k]
            cnt = nptr[v + 1] - nptr[v]
            rows.append(np.repeat(np.arange(T), cnt))
            starts = np.repeat(nptr[v], cnt)
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            cols.append(ntri[starts + offs])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        key = np.unique(rows * T + cols)
        rows, cols = key // T, key % T
        ptr = np.zeros(T + 1, dtype=np.int64)
        np.add.at(ptr, rows + 1, 1)
        return np.cumsum(ptr), cols.astype(np.int64)

    def patch_boundary(self, node: int) -> list[tuple[np.ndarray, np.ndarray, int, int]]:
        """Far edges of ``node``'s patch as ``(p_a, p_b, a, b)`` tuples."""
        ptr, fe = self.far_edges
        segs = fe[ptr[node]:ptr[node + 1]]
        if len(segs) == 0:
            raise ValueError(f"node {node} has an empty patch")
        return [(self.points[a], self.points[b], int(a), int(b)) for a, b in segs]

    def origin_boundary_nodes(self) -> np.ndarray:
        """Nodes on the ball boundary, ordered by polar angle around ``x0``."""
        idx = np.flatnonzero(self.kind == ORIGIN_BOUNDARY)
        d = self.points[idx] - np.asarray(self.x0)
        ang = np.arctan2(d[:, 1], d[:, 0])
        lo = _arc_start(self.x0, self.r_K)
        ang = np.mod(ang - lo, 2 * np.pi)
        return idx[np.argsort(ang, kind="stable")]

    # ------------------------------------------------------------------
    # point location

    @cached_property
    def _locator(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        nb = max(1, int(math.sqrt(self.n_triangles / 2.0)))
        return _build_buckets(self.points, self.triangles, lo, hi, nb)

    def locate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle (``-1`` if none) and barycentric coordinates."""
        pts = np.ascontiguousarray(np.asarray(pts, dtype=float).reshape(-1, 2))
        lo, hi, nb, bptr, btri = self._locator
        return _locate(pts, self.points, self.triangles, lo, hi, nb, bptr, btri)

    def interpolate(self, values, pts) -> np.ndarray:
        """P1 interpolation; raises for points outside the mesh."""
        pts = np.asarray(pts, dtype=float)
        tri, bary = self.locate(pts)
        if (tri < 0).any():
            bad = pts.reshape(-1, 2)[tri < 0][0]
            raise ValueError(f"point {bad.tolist()} lies outside the meshed domain")
        vals = np.asarray(values)[self.triangles[tri]]
        return np.einsum("ij,ij->i", vals, bary).reshape(pts.shape[:-1])

    # ------------------------------------------------------------------
    # export

    def to_dict(self) -> dict:
        return {
            "info": self.info(),
            "points": self.points.tolist(),
            "triangles": self.triangles.tolist(),
            "kind": self.kind.tolist(),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    def write_vtk(self, path, point_data: dict | None = None, cell_data: dict | None = None,
                  title: str = "freeflight mesh") -> None:
        """Legacy ASCII VTK unstructured grid of triangles."""
        lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
                 f"POINTS {self.n_nodes} double"]
        lines += [f"{x:.17g} {y:.17g} 0" for x, y in self.points]
        lines.append(f"CELLS {self.n_triangles} {4 * self.n_triangles}")
        lines += [f"3 {a} {b} {c}" for a, b, c in self.triangles]
        lines.append(f"CELL_TYPES {self.n_triangles}")
        lines += ["5"] * self.n_triangles
        for header, data, count in (("POINT_DATA", point_data, self.n_nodes),
                                    ("CELL_DATA", cell_data, self.n_triangles)):
            if not data:
                continue
            lines.append(f"{header} {count}")
            for name, arr in data.items():
                arr = np.asarray(arr)
                if arr.ndim == 2:
                    lines.append(f"VECTORS {name} double")
                    lines += [f"{a:.17g} {b:.17g} 0" for a, b in arr]
                else:
                    lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                    lines += [f"{v:.17g}" for v in arr.astype(float)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# construction


def build_mesh(n: int, x0=(0.0, 0.5), r_K: float | None = 0.1, relax: bool = True) -> TriMesh:
    """Triangulate ``[0, 1]^2`` minus ``B_{r_K}(x0)`` from an ``n x n`` grid.

    ``r_K=None`` gives the plain grid triangulation (no ball), mainly for tests.
    """
    if n < 3 or (r_K is not None and n < 11):
        raise ValueError(f"grid resolution n={n} too small")
    dx = 1.0 / (n - 1)
    g = np.linspace(0.0, 1.0, n)
    X, Y = np.meshgrid(g, g, indexing="xy")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    x0 = (float(x0[0]), float(x0[1]))
    if r_K is None:
        tri = _canonical_delaunay(grid)
        kind = np.where(_on_box(grid), OUTER_BOUNDARY, INTERIOR).astype(np.int8)
        return TriMesh(grid, tri, kind, x0, 0.0, dx, n)

    if not (0.0 <= x0[0] <= 1.0 and 0.0 <= x0[1] <= 1.0):
        raise ValueError("origin must lie in the closed unit square")
    if r_K <= 2.0 * dx:
        raise ValueError(f"ball radius {r_K} not resolved by grid spacing {dx}")
    if r_K >= 0.25:
        raise ValueError("ball radius must be below 0.25")

    d = np.hypot(grid[:, 0] - x0[0], grid[:, 1] - x0[1])
    keep = d >= r_K + 0.5 * dx
    circle = _arc_nodes(x0, r_K, dx)
    pts = np.vstack([grid[keep], circle])
    on_circle = np.zeros(len(pts), dtype=bool)
    on_circle[-len(circle):] = True

    if relax:
        _relax_ring(pts, on_circle, x0, r_K, dx)

    tri = _canonical_delaunay(pts, skip=on_circle)
    tri = tri[~on_circle[tri].all(axis=1)]

    kind = np.full(len(pts), INTERIOR, dtype=np.int8)
    kind[_on_box(pts)] = OUTER_BOUNDARY
    kind[on_circle] = ORIGIN_BOUNDARY
    mesh = TriMesh(pts, tri, kind, x0, float(r_K), dx, n)
    _check_mesh(mesh)
    return mesh


def _on_box(pts):
    return ((np.abs(pts) < _BOX_TOL) | (np.abs(pts - 1.0) < _BOX_TOL)).any(axis=1)


def _arc_interval(x0, r):
    """Angular interval ``(start, length)`` of the circle inside the unit square."""
    cuts = []
    for axis, line in ((0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)):
        off = (line - x0[axis]) / r
        if abs(off) <= 1.0:
            base = math.acos(off) if axis == 0 else math.asin(off)
            cand = (base, -base) if axis == 0 else (base, math.pi - base)
            cuts.extend(c % (2 * math.pi) for c in cand)
    cuts = sorted(set(round(c, 14) for c in cuts))

    def inside(a):
        p = (x0[0] + r * math.cos(a), x0[1] + r * math.sin(a))
        return -1e-14 <= p[0] <= 1 + 1e-14 and -1e-14 <= p[1] <= 1 + 1e-14

    if len(cuts) < 2:
        if inside(0.0):
            return 0.0, 2 * math.pi
        raise ValueError("origin ball does not meet the domain")
    arcs = []
    for k, a in enumerate(cuts):
        b = cuts[(k + 1) % len(cuts)]
        length = (b - a) % (2 * math.pi)
        if length > 1e-12 and inside(a + 0.5 * length):
            arcs.append((a, length))
    if len(arcs) != 1:
        raise ValueError("origin ball boundary must meet the domain in a single arc")
    return arcs[0]


def _arc_start(x0, r):
    return _arc_interval(x0, r)[0]


def _arc_nodes(x0, r, dx):
    start, length = _arc_interval(x0, r)
    full = length >= 2 * math.pi - 1e-12
    m = max(4, int(math.ceil(length * r / dx)))
    if full:
        ang = start + length * np.arange(m) / m
    else:
        ang = start + length * np.arange(m + 1) / m
    pts = np.column_stack([x0[0] + r * np.cos(ang), x0[1] + r * np.sin(ang)])
    if not full:
        # arc endpoints sit exactly on the box
        for k in (0, -1):
            for ax in (0, 1):
                for line in (0.0, 1.0):
                    if abs(pts[k, ax] - line) < 1e-9:
                        pts[k, ax] = line
    return pts


def _canonical_delaunay(pts, skip=None):
    """Delaunay triangulation, counter-clockwise, with cocircular ties broken
    canonically.  Quads whose four corners are all in ``skip`` are left alone."""
    tri = Delaunay(pts).simplices.astype(np.int64)
    P = pts[tri]
    cross = ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
             - (P[:, 1, 1] - P[:, 0, 1]) * (P[:, 2, 0] - P[:, 0, 0]))
    cw = cross < 0
    tri[cw] = tri[cw][:, [0, 2, 1]]
    tri = tri[np.abs(cross) > 1e-14 * np.abs(cross).max()]
    if skip is None:
        skip = np.zeros(len(pts), dtype=bool)
    for _ in range(50):
        if not _flip_cocircular(pts, tri, skip):
            break
    else:
        raise RuntimeError("cocircular diagonal flips did not settle")
    return tri


def _flip_cocircular(pts, tri, skip) -> bool:
    """Flip cocircular quads to the diagonal through their lexicographically
    smallest corner.  Modifies ``tri`` in place; returns whether anything flipped."""
    a = tri[:, [1, 2, 0]].ravel()
    b = tri[:, [2, 0, 1]].ravel()
    key = np.minimum(a, b) * len(pts) + np.maximum(a, b)
    order = np.argsort(key, kind="stable")
    ks = key[order]
    dup = np.flatnonzero(ks[1:] == ks[:-1])
    h1 = order[dup]
    h2 = order[dup + 1]
    t1, k1 = h1 // 3, h1 % 3
    t2, k2 = h2 // 3, h2 % 3
    c = tri[t1, k1]
    p = tri[t1, (k1 + 1) % 3]
    q = tri[t1, (k1 + 2) % 3]
    d = tri[t2, k2]
    quad = np.stack([c, p, q, d], axis=1)
    det = _incircle(pts[c], pts[p], pts[q], pts[d])
    L = np.linalg.norm(pts[c] - pts[d], axis=1)
    cocirc = (np.abs(det) <= 1e-9 * L ** 4) & ~skip[quad].all(axis=1)
    if not cocirc.any():
        return False
    qp = pts[quad]
    xs, ys = qp[..., 0], qp[..., 1]
    xmin = xs.min(axis=1, keepdims=True)
    lexmin = np.argmin(np.where(np.abs(xs - xmin) <= 1e-12, ys, np.inf), axis=1)
    idx = np.flatnonzero(cocirc & ((lexmin == 0) | (lexmin == 3)))
    if len(idx) == 0:
        return False
    # flip all quads whose triangles are claimed by no other candidate
    claims = np.bincount(np.concatenate([t1[idx], t2[idx]]), minlength=len(tri))
    solo = (claims[t1[idx]] == 1) & (claims[t2[idx]] == 1)
    k = idx[solo]
    new1 = np.stack([c[k], p[k], d[k]], axis=1)
    new2 = np.stack([c[k], d[k], q[k]], axis=1)
    tri[t1[k]] = new1
    tri[t2[k]] = new2
    used = np.zeros(len(tri), dtype=bool)
    used[t1[k]] = True
    used[t2[k]] = True
    for k in idx[~solo]:
        i, j = t1[k], t2[k]
        if used[i] or used[j]:
            continue
        used[i] = used[j] = True
        tri[i] = (c[k], p[k], d[k])
        tri[j] = (c[k], d[k], q[k])
    return True


def _incircle(a, b, c, d):
    """Positive if d lies inside the circle through counter-clockwise a, b, c."""
    adx, ady = a[:, 0] - d[:, 0], a[:, 1] - d[:, 1]
    bdx, bdy = b[:, 0] - d[:, 0], b[:, 1] - d[:, 1]
    cdx, cdy = c[:, 0] - d[:, 0], c[:, 1] - d[:, 1]
    return ((adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
            - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
            + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady))


def _relax_ring(pts, on_circle, x0, r, dx, band=3.5, sweeps=14):
    """Move free nodes near the circle to improve the worst diameter and
    altitude of their incident triangles relative to the grid triangle.  Compass
    search per node, Gauss-Seidel over nodes, retriangulating between sweeps.
    Only the local point subset around the ball is triangulated; Delaunay
    triangles are determined by nearby points."""
    dist = np.hypot(pts[:, 0] - x0[0], pts[:, 1] - x0[1])
    local = np.flatnonzero(dist < r + (band + 4.0) * dx)
    free_global = np.flatnonzero((dist < r + band * dx) & ~on_circle & ~_on_box(pts))
    if len(free_global) == 0:
        return
    lpts = pts[local]
    lcirc = on_circle[local]
    pos = np.searchsorted(local, free_global)
    D0 = math.sqrt(2.0) * dx
    dirs = np.column_stack([np.cos(np.arange(8) * np.pi / 4), np.sin(np.arange(8) * np.pi / 4)])
    isfree = np.zeros(len(local), dtype=bool)
    isfree[pos] = True
    for _ in range(sweeps):
        tri = Delaunay(lpts).simplices
        tri = tri[~lcirc[tri].all(axis=1)]
        sel = tri[isfree[tri].any(axis=1)]
        flat = sel.ravel()
        order = np.argsort(flat, kind="stable")
        fs = flat[order]
        starts = np.searchsorted(fs, pos)
        ends = np.searchsorted(fs, pos, side="right")
        for i, s0, e0 in zip(pos, starts, ends):
            rows = order[s0:e0] // 3
            k = order[s0:e0] % 3
            T = sel[rows]
            ar = np.arange(len(T))
            A = lpts[T[ar, (k + 1) % 3]]
            B = lpts[T[ar, (k + 2) % 3]]
            # orient far edges so that (p, A, B) is counter-clockwise
            p = lpts[i].copy()
            sgn = (A[:, 0] - p[0]) * (B[:, 1] - p[1]) - (A[:, 1] - p[1]) * (B[:, 0] - p[0])
            A, B = np.where(sgn[:, None] > 0, A, B), np.where(sgn[:, None] > 0, B, A)
            best = _ring_score(p[None], A, B, D0)[0]
            step = 0.25 * dx
            while step > 0.005 * dx:
                cand = p + step * dirs
                sc = _ring_score(cand, A, B, D0)
                bad = ((np.hypot(cand[:, 0] - x0[0], cand[:, 1] - x0[1]) < r + 0.2 * dx)
                       | (cand < 0.2 * dx).any(axis=1) | (cand > 1 - 0.2 * dx).any(axis=1))
                sc[bad] = np.inf
                j = int(np.argmin(sc))
                if sc[j] < best:
                    best = sc[j]
                    p = cand[j]
                else:
                    step *= 0.5
            lpts[i] = p
    pts[local] = lpts


def _ring_score(cand, A, B, D0):
    """Worst of diameter / D0 and (D0/2) / altitude over the triangles
    (cand, A_k, B_k); both ratios equal 1 on the uniform grid."""
    u = A[None] - cand[:, None]
    v = B[None] - cand[:, None]
    w = B - A
    cr = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    lw = np.broadcast_to(np.hypot(w[:, 0], w[:, 1]), cr.shape)
    diam = np.maximum(np.maximum(np.hypot(u[..., 0], u[..., 1]), np.hypot(v[..., 0], v[..., 1])), lw)
    alt = cr / diam
    s = np.maximum(diam / D0, 0.5 * D0 / np.maximum(alt, 1e-300))
    s[alt <= 0] = np.inf
    return s.max(axis=1)


def _check_mesh(mesh: TriMesh) -> None:
    if (mesh.areas <= 0).any():
        raise ValueError("mesh contains degenerate or inverted triangles")
    if (mesh.edge_triangle_counts() > 2).any():
        raise ValueError("non-conforming mesh: edge shared by more than two triangles")
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.triangles.ravel()] = True
    if not used.all():
        raise ValueError("mesh has isolated nodes")


# ----------------------------------------------------------------------
# bucket point location


def _build_buckets(points, triangles, lo, hi, nb):
    P = points[triangles]
    span = np.maximum(hi - lo, 1e-300)
    bmin = np.floor((P.min(axis=1) - lo) / span * nb).astype(np.int64).clip(0, nb - 1)
    bmax = np.floor((P.max(axis=1) - lo) / span * nb).astype(np.int64).clip(0, nb - 1)
    nx_ = bmax[:, 0] - bmin[:, 0] + 1
    ny_ = bmax[:, 1] - bmin[:, 1] + 1
    cnt = nx_ * ny_
    tid = np.repeat(np.arange(len(triangles)), cnt)
    off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    bx = bmin[tid, 0] + off % nx_[tid]
    by = bmin[tid, 1] + off // nx_[tid]
    bucket = by * nb + bx
    order = np.argsort(bucket, kind="stable")
    ptr = np.zeros(nb * nb + 1, dtype=np.int64)
    np.add.at(ptr, bucket + 1, 1)
    return lo.astype(float), hi.astype(float), nb, np.cumsum(ptr), tid[order].astype(np.int64)


@njit(cache=True)
def _locate(q, points, triangles, lo, hi, nb, bptr, btri):
    n = q.shape[0]
    tri_out = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    sx = hi[0] - lo[0]
    sy = hi[1] - lo[1]
    for i in range(n):
        x = q[i, 0]
        y = q[i, 1]
        bx = int((x - lo[0]) / sx * nb)
        by = int((y - lo[1]) / sy * nb)
        if bx == nb:
            bx = nb - 1
        if by == nb:
            by = nb - 1
        if bx < 0 or by < 0 or bx >= nb or by >= nb:
            continue
        b = by * nb + bx
        best = -1e300
        for k in range(bptr[b], bptr[b + 1]):
            t = btri[k]
            a0 = triangles[t, 0]
            a1 = triangles[t, 1]
            a2 = triangles[t, 2]
            x0 = points[a0, 0]
            y0 = points[a0, 1]
            x1 = points[a1, 0]
            y1 = points[a1, 1]
            x2 = points[a2, 0]
            y2 = points[a2, 1]
            det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            l1 = ((x - x0) * (y2 - y0) - (x2 - x0) * (y - y0)) / det
            l2 = ((x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)) / det
            l0 = 1.0 - l1 - l2
            m = min(l0, min(l1, l2))
            if m > best:
                best = m
                tri_out[i] = t
                bary[i, 0] = l0
                bary[i, 1] = l1
                bary[i, 2] = l2
            if m >= 0.0:
                break
        if best < -1e-10:
            tri_out[i] = -1
    return tri_out, bary
