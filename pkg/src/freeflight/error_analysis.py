"""Discretization error: a-priori bound, Hessian recovery, reference comparison
and convergence studies.

The a-priori bound on ``max |u_h - u|`` over the regular region is

    h theta (H* + 2 c1 sqrt(vbar) (vbar + c0)^2 / (vbar - c0)^(9/2)) (vbar + c0) |u|_inf
        + 7 h / (vbar - c0),

with ``H*`` the supremum of the Hessian norm of ``u`` away from cut loci.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from freeflight.characteristics import boundary_oracle_g
from freeflight.hjb import BoundaryOracle, ValueField, solve
from freeflight.kinematics import ModelViolation
from freeflight.singularity import detect_singular_simplices, trust_region
from freeflight.trimesh import ORIGIN_BOUNDARY, TriMesh, build_mesh
from freeflight.windfield import CASES, WindField


@dataclass
class ErrorReport:
    n: int
    h: float
    h_perp: float
    theta: float
    hessian_sup: float
    c0: float
    c1: float
    vbar: float
    max_value: float
    apriori: float
    error: float | None = None
    error_all: float | None = None
    masked_triangles: int = 0
    flagged_triangles: int = 0
    hessian_skipped: int = 0
    hessian_masked: int = 0
    order: float | None = None
    solve_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def apriori_bound(h: float, theta: float, hessian_sup: float, c0: float, c1: float,
                  vbar: float, max_value: float) -> float:
    """Closed-form a-priori bound on the sup-norm discretization error."""
    if not c0 < vbar:
        raise ModelViolation(f"wind bound {c0} is not below airspeed {vbar}")
    for name, val in (("h", h), ("hessian_sup", hessian_sup), ("c0", c0), ("c1", c1),
                      ("max_value", max_value)):
        if not (val >= 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be finite and non-negative, got {val}")
    if not theta >= 1:
        raise ValueError(f"aspect ratio theta must be at least 1, got {theta}")
    wind_term = 2.0 * c1 * math.sqrt(vbar) * (vbar + c0) ** 2 / (vbar - c0) ** 4.5
    return h * theta * (hessian_sup + wind_term) * (vbar + c0) * max_value + 7.0 * h / (vbar - c0)


# ----------------------------------------------------------------------
# Hessian recovery


def dilate(mesh: TriMesh, tri_mask, rings: int = 1) -> np.ndarray:
    """Grow a triangle mask by ``rings`` layers of vertex-adjacent triangles."""
    mask = np.asarray(tri_mask, dtype=bool).copy()
    for _ in range(rings):
        nodes = np.zeros(mesh.n_nodes, dtype=bool)
        nodes[mesh.triangles[mask].ravel()] = True
        mask |= nodes[mesh.triangles].any(axis=1)
    return mask


def hessian_sup_estimate(values, mesh: TriMesh, mask=None, return_details: bool = False):
    """Largest spectral norm of nodal Hessians recovered by quadratic fits.

    For every node off the ball boundary whose incident triangles are all
    unmasked, a quadratic is fitted by least squares to the nodal values on
    its two-ring patch.  Nodes whose patch cannot determine a quadratic are
    skipped and counted.  ``values`` may be a ValueField or a nodal array.
    """
    u = np.ascontiguousarray(values.u if isinstance(values, ValueField) else values, dtype=float)
    if mask is None:
        mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask = np.asarray(mask)
    if mask.dtype != bool:
        m = np.zeros(mesh.n_triangles, dtype=bool)
        m[mask] = True
        mask = m
    bad_node = np.zeros(mesh.n_nodes, dtype=bool)
    bad_node[mesh.triangles[mask].ravel()] = True
    eligible = (mesh.kind != ORIGIN_BOUNDARY) & ~bad_node
    nodes = np.flatnonzero(eligible).astype(np.int64)
    ptr, nbr = mesh.neighbors
    norms, ok = _fit_hessians(nodes, u, mesh.points, ptr, nbr, mesh.h)
    skipped = int((~ok).sum())
    hs = float(norms[ok].max()) if ok.any() else 0.0
    if return_details:
        per_node = np.full(mesh.n_nodes, np.nan)
        per_node[nodes[ok]] = norms[ok]
        return hs, {"skipped": skipped, "evaluated": int(ok.sum()), "per_node": per_node}
    return hs


@njit(cache=True)
def _fit_hessians(nodes, u, pts, ptr, nbr, h):
    m = nodes.shape[0]
    norms = np.zeros(m)
    ok = np.zeros(m, dtype=np.bool_)
    mark = np.full(pts.shape[0], -1, dtype=np.int64)
    buf = np.empty(256, dtype=np.int64)
    for k in range(m):
        i = nodes[k]
        cnt = 0
        mark[i] = k
        for q in range(ptr[i], ptr[i + 1]):
            j = nbr[q]
            if mark[j] != k and cnt < 256:
                mark[j] = k
                buf[cnt] = j
                cnt += 1
        first = cnt
        for a in range(first):
            j = buf[a]
            for q in range(ptr[j], ptr[j + 1]):
                l = nbr[q]
                if mark[l] != k and cnt < 256:
                    mark[l] = k
                    buf[cnt] = l
                    cnt += 1
        if cnt < 8:
            continue
        A = np.empty((cnt + 1, 6))
        b = np.empty(cnt + 1)
        A[0, 0] = 1.0
        A[0, 1] = 0.0
        A[0, 2] = 0.0
        A[0, 3] = 0.0
        A[0, 4] = 0.0
        A[0, 5] = 0.0
        b[0] = 0.0
        for a in range(cnt):
            j = buf[a]
            dx = (pts[j, 0] - pts[i, 0]) / h
            dy = (pts[j, 1] - pts[i, 1]) / h
            A[a + 1, 0] = 1.0
            A[a + 1, 1] = dx
            A[a + 1, 2] = dy
            A[a + 1, 3] = 0.5 * dx * dx
            A[a + 1, 4] = dx * dy
            A[a + 1, 5] = 0.5 * dy * dy
            b[a + 1] = u[j] - u[i]
        M = A.T @ A
        ev = np.linalg.eigvalsh(M)
        if ev[0] < 1e-12 * ev[-1]:
            continue
        coef = np.linalg.solve(M, A.T @ b)
        hxx = coef[3] / (h * h)
        hxy = coef[4] / (h * h)
        hyy = coef[5] / (h * h)
        tr = 0.5 * (hxx + hyy)
        rad = math.sqrt(0.25 * (hxx - hyy) ** 2 + hxy * hxy)
        norms[k] = abs(tr) + rad
        ok[k] = True
    return norms, ok


# ----------------------------------------------------------------------
# a-posteriori comparison


def aposteriori_error(values: ValueField, reference: ValueField, mesh: TriMesh | None = None,
                      reference_mesh: TriMesh | None = None, mask=None) -> dict:
    """Sup-norm difference between a coarse solution and an interpolated reference.

    Ball-boundary nodes are compared with the reference boundary data.
    Returns ``{"masked": ..., "all": ..., "nodes": ...}`` where ``masked``
    excludes every node of a masked coarse triangle.
    """
    mesh = values.mesh if mesh is None else mesh
    reference_mesh = reference.mesh if reference_mesh is None else reference_mesh
    if (not np.allclose(mesh.x0, reference_mesh.x0) or abs(mesh.r_K - reference_mesh.r_K) > 1e-14):
        raise ValueError("coarse and reference meshes cover different domains")
    if reference_mesh.n_nodes < mesh.n_nodes:
        raise ValueError("reference mesh is coarser than the mesh under test")
    ref = np.empty(mesh.n_nodes)
    bnd = mesh.kind == ORIGIN_BOUNDARY
    inner = np.flatnonzero(~bnd)
    ref[inner] = reference_mesh.interpolate(reference.u, mesh.points[inner])
    if bnd.any():
        if reference.oracle is None:
            raise ValueError("reference solution carries no boundary data")
        ref[bnd] = reference.oracle.g(mesh.points[bnd])
    err = np.abs(values.u - ref)
    keep = np.ones(mesh.n_nodes, dtype=bool)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.dtype != bool:
            mm = np.zeros(mesh.n_triangles, dtype=bool)
            mm[mask] = True
            mask = mm
        keep[mesh.triangles[mask].ravel()] = False
    return {"masked": float(err[keep].max()) if keep.any() else 0.0,
            "all": float(err.max()),
            "nodes": err}


# ----------------------------------------------------------------------
# end-to-end helpers


@dataclass
class Problem:
    """One solve: mesh, wind, boundary data and the converged field."""

    mesh: TriMesh
    field: WindField
    vbar: float
    oracle: BoundaryOracle
    values: ValueField


def solve_case(field: WindField, n: int, vbar: float = 1.0, tol: float = 1e-10, x0=(0.0, 0.5),
               r_K: float = 0.1, scheme: str = "jacobi", mesh: TriMesh | None = None,
               max_sweeps: int = 100_000) -> Problem:
    mesh = build_mesh(n, x0, r_K) if mesh is None else mesh
    if not field.vortices:
        oracle = BoundaryOracle.constant_wind(mesh, field.constant, vbar)
    else:
        oracle = boundary_oracle_g(mesh, field, vbar)
    values = solve(mesh, field, vbar, oracle, tol=tol, scheme=scheme, max_sweeps=max_sweeps)
    return Problem(mesh, field, vbar, oracle, values)


def regular_mask(values: ValueField, eps: float, rings: int = 1, angle_threshold: float = 90.0):
    """Flagged triangles, their 2-eps trust region, dilated by ``rings``."""
    mesh = values.mesh
    flagged = detect_singular_simplices(values, mesh, angle_threshold)
    region = trust_region(values, mesh, flagged, eps, angle_threshold)
    return dilate(mesh, region.marked_triangles, rings), region


def transfer_mask(mesh: TriMesh, fine_mesh: TriMesh, fine_mask) -> np.ndarray:
    """Triangles of ``mesh`` containing the centroid of a masked ``fine_mesh`` triangle."""
    ids = np.flatnonzero(fine_mask)
    out = np.zeros(mesh.n_triangles, dtype=bool)
    if len(ids):
        tri, _ = mesh.locate(fine_mesh.points[fine_mesh.triangles[ids]].mean(axis=1))
        out[tri[tri >= 0]] = True
    return out


def error_report(problem: Problem, reference: ValueField | None = None, rings: int = 1,
                 reference_flagged=None, angle_threshold: float = 90.0) -> ErrorReport:
    """Bound and (if a reference is given) measured error for one solve.

    ``eps`` is the unmasked a-posteriori error, or the a-priori bound when
    there is no reference.  The Hessian supremum excludes the coarse trust
    region built with ``eps`` plus ``rings`` triangles.  The measured error
    excludes the regular-region complement as seen by the reference: the
    trust region of the reference's own singular simplices, with the same
    ``eps``, carried over to the coarse mesh and dilated by ``rings``.
    """
    mesh, values, field, vbar = problem.mesh, problem.values, problem.field, problem.vbar
    c0, c1 = field.bounds()
    maxval = float(np.max(np.abs(values.u)))
    err_all = None
    if reference is not None:
        err_all = aposteriori_error(values, reference)["all"]
        eps = err_all
    else:
        # bound with the unmasked Hessian, an upper estimate of the masked one
        eps = apriori_bound(mesh.h, mesh.theta, hessian_sup_estimate(values, mesh), c0, c1, vbar, maxval)
    mask, region = regular_mask(values, eps, rings, angle_threshold)
    hs, info = hessian_sup_estimate(values, mesh, mask, return_details=True)
    bound = apriori_bound(mesh.h, mesh.theta, hs, c0, c1, vbar, maxval)
    err = None
    err_mask = mask
    if reference is not None:
        rmesh = reference.mesh
        if reference_flagged is None:
            reference_flagged = detect_singular_simplices(reference, rmesh, angle_threshold)
        rregion = trust_region(reference, rmesh, reference_flagged, eps, angle_threshold)
        err_mask = dilate(mesh, transfer_mask(mesh, rmesh, rregion.marked_triangles), rings)
        err = aposteriori_error(values, reference, mask=err_mask)["masked"]
    return ErrorReport(mesh.n, mesh.h, mesh.h_perp, mesh.theta, hs, c0, c1, vbar, maxval, bound,
                       err, err_all, int(err_mask.sum()), int(len(region.flagged)), info["skipped"],
                       hessian_masked=int(mask.sum()),
                       solve_seconds=float(values.report.get("seconds", 0.0)))


def convergence_study(case, resolutions, reference_n: int = 1001, vbar: float = 1.0,
                      tol: float = 1e-10, reference: Problem | None = None, rings: int = 1,
                      progress=None, x0=(0.0, 0.5), r_K: float = 0.1,
                      on_row=None) -> list[ErrorReport]:
    """Errors and bounds over a sequence of resolutions against a fine reference.

    ``case`` is a key of :data:`freeflight.windfield.CASES` or a WindField.
    The observed order of each row is ``log2(e_prev / e)``.  ``on_row`` is
    called as ``on_row(problem, reference, report)`` after each resolution.
    """
    resolutions = list(resolutions)
    if resolutions != sorted(resolutions):
        raise ValueError("resolutions must be ascending")
    if reference is None and any(n >= reference_n for n in resolutions):
        raise ValueError("all resolutions must be below the reference resolution")
    field = CASES[case]() if isinstance(case, str) else case
    if reference is None:
        t = time.perf_counter()
        reference = solve_case(field, reference_n, vbar, tol, x0, r_K)
        if progress:
            progress(f"reference n={reference_n} in {time.perf_counter() - t:.1f}s")
    ref_flagged = detect_singular_simplices(reference.values, reference.mesh)
    rows: list[ErrorReport] = []
    for n in resolutions:
        prob = solve_case(field, n, vbar, tol, x0, r_K)
        rep = error_report(prob, reference.values, rings, ref_flagged)
        if rows and rows[-1].error and rep.error:
            rep.order = math.log2(rows[-1].error / rep.error)
        rows.append(rep)
        if on_row is not None:
            on_row(prob, reference, rep)
        if progress:
            progress(f"n={n} error={rep.error:.3e} bound={rep.apriori:.3e}")
    return rows
