"""Characteristics of the Zermelo Hamiltonian: shooting, boundary data,
conjugate-point detection and trajectory extraction.

Characteristics solve ``y' = H_p(y, p)``, ``p' = -H_x(y, p)`` with
``H(x, p) = vbar |p| + w(x).p - 1``; along an optimal path ``y'`` is the
ground velocity and ``p`` the gradient of the arrival time.  Everything is
integrated with fixed-step classical RK4 (numba kernels in
:mod:`freeflight._numerics`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq

from freeflight import _numerics as nx
from freeflight.hjb import BoundaryOracle, ValueField
from freeflight.kinematics import ModelViolation
from freeflight.trimesh import TriMesh, _arc_interval
from freeflight.windfield import WindField

# default number of RK4 steps per unit of the requested time horizon
DEFAULT_STEPS = 2048
# a step never exceeds this fraction of the wind's time scale 1 / sup|w_x|
RATE_STEP_FRACTION = 0.02


class IntegrationError(RuntimeError):
    pass


class BacktrackError(RuntimeError):
    pass


@dataclass
class Characteristic:
    """Sampled state/covector path with optional linearized flow."""

    t: np.ndarray
    y: np.ndarray
    p: np.ndarray
    variation: np.ndarray | None = None
    launch: dict = dc_field(default_factory=dict)
    exit_time: float | None = None
    conjugate_time: float | None = None

    def hamiltonian(self, field: WindField, vbar: float) -> np.ndarray:
        w = field.eval_wind(self.y)
        return vbar * np.linalg.norm(self.p, axis=1) + np.sum(w * self.p, axis=1) - 1.0

    def ground_velocity(self, field: WindField, vbar: float) -> np.ndarray:
        w = field.eval_wind(self.y)
        return vbar * self.p / np.linalg.norm(self.p, axis=1, keepdims=True) + w


@dataclass
class Trajectory:
    """Polyline from the origin set to a destination, with times along it."""

    points: np.ndarray
    times: np.ndarray
    arrival_time: float
    method: str
    boundary_point: np.ndarray | None = None
    safe: bool | None = None
    info: dict = dc_field(default_factory=dict)

    def to_rows(self) -> np.ndarray:
        return np.column_stack([self.times, self.points])


def default_step(field: WindField, T: float) -> float:
    _, c1 = field.bounds()
    dt = T / DEFAULT_STEPS
    if c1 > 0:
        dt = min(dt, RATE_STEP_FRACTION / c1)
    return dt


def default_horizon(field: WindField, vbar: float) -> float:
    """Maximum exit time used to truncate diagnostic shots."""
    c0, _ = field.bounds()
    return 3.0 / (vbar - c0)


def normalize_covector(x, p, field: WindField, vbar: float) -> np.ndarray:
    """Scale ``p`` so that ``H(x, p) = 0``."""
    p = np.asarray(p, dtype=float)
    w = field.eval_wind(np.asarray(x, dtype=float))
    denom = vbar * np.linalg.norm(p) + float(np.dot(w, p))
    if denom <= 0:
        raise ModelViolation("covector cannot be normalized: wind exceeds airspeed")
    return p / denom


# ----------------------------------------------------------------------
# launch covector


def mu_of_xi(xi, g_x, field: WindField, vbar: float, x0) -> float:
    """Normal component ``mu > 0`` with ``H(xi, g_x + mu nu) = 0``."""
    xi = np.asarray(xi, dtype=float)
    g_x = np.asarray(g_x, dtype=float)
    nu = xi - np.asarray(x0, dtype=float)
    nu = nu / np.linalg.norm(nu)
    c0, _ = field.bounds()
    w = field.eval_wind(xi)

    def H(mu):
        p = g_x + mu * nu
        return vbar * math.hypot(p[0], p[1]) + float(np.dot(w, p)) - 1.0

    hi = 10.0 / (vbar - c0)
    h0, h1 = H(0.0), H(hi)
    if not (h0 < 0.0 < h1):
        raise ValueError(f"no root of H along the normal in [0, {hi}]: inconsistent g_x")
    mu = brentq(H, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(mu)


def launch_covector(oracle: BoundaryOracle, xi, field: WindField, vbar: float) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    g_x = oracle.g_x(xi)
    mu = mu_of_xi(xi, g_x, field, vbar, oracle.x0)
    return g_x + mu * oracle.normal(xi)


# ----------------------------------------------------------------------
# shooting


def shoot(start, p0, T: float, field: WindField, vbar: float, step: float | None = None,
          box=((0.0, 0.0), (1.0, 1.0)), normalize: bool = True) -> Characteristic:
    """RK4 characteristic from ``start`` with initial covector ``p0``.

    The path stops early when it leaves ``box`` (``exit_time`` is set);
    ``box=None`` disables the check.
    """
    start = np.asarray(start, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if np.linalg.norm(p0) < 1e-8:
        raise IntegrationError("initial covector vanishes")
    if normalize:
        p0 = normalize_covector(start, p0, field, vbar)
    dt = T / DEFAULT_STEPS if step is None else float(step)
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    check = box is not None
    lo, hi = (box if check else ((0.0, 0.0), (1.0, 1.0)))
    s0 = np.array([start[0], start[1], p0[0], p0[1]])
    out, nvalid = nx.shoot_path(s0, dt, nsteps, lo[0], lo[1], hi[0], hi[1], check, vbar, *field.params)
    if nvalid < 0:
        raise IntegrationError(f"covector collapsed at t = {(-nvalid - 1) * dt}")
    out = out[:nvalid]
    t = dt * np.arange(nvalid)
    exit_time = t[-1] if (check and nvalid < nsteps + 1) else None
    return Characteristic(t, out[:, :2].copy(), out[:, 2:].copy(),
                          launch={"start": start.tolist(), "p0": p0.tolist(), "step": dt},
                          exit_time=exit_time)


def boundary_oracle_g(mesh: TriMesh, field: WindField, vbar: float, x0=None, r_K=None,
                      n_scan: int = 720, step: float | None = None) -> BoundaryOracle:
    """Arrival times on the ball boundary by shooting from ``x0``.

    Characteristics leave ``x0`` with covector ``e / (vbar + w(x0).e)`` for
    unit ``e``.  A fan of ``n_scan`` headings locates, for every boundary
    node, the headings whose crossing of the circle brackets the node;
    root-finding on the signed angular miss then pins the crossing down and
    the earliest crossing time is kept.
    """
    x0 = tuple(mesh.x0 if x0 is None else x0)
    r = mesh.r_K if r_K is None else float(r_K)
    c0, _ = field.bounds()
    if not c0 < vbar:
        raise ModelViolation(f"wind bound {c0} is not below airspeed {vbar}")
    dt = r / 512.0 if step is None else step
    maxsteps = int(math.ceil(4.0 * r / ((vbar - c0) * dt))) + 8
    params = field.params
    start, length = _arc_interval(x0, r)

    headings = np.linspace(0.0, 2 * math.pi, n_scan, endpoint=False)
    fan = nx.shoot_fan(x0[0], x0[1], headings, r, dt, maxsteps, vbar, *params)
    if (fan[:, 0] < 0).any():
        raise IntegrationError("a characteristic from the origin never reached the ball boundary")
    cross = np.arctan2(fan[:, 2] - x0[1], fan[:, 1] - x0[0])

    def crossing(heading):
        e0, e1 = math.cos(heading), math.sin(heading)
        wx, wy = nx.wind_at(x0[0], x0[1], *params)
        mu = 1.0 / (vbar + wx * e0 + wy * e1)
        res = nx.shoot_to_circle(x0[0], x0[1], mu * e0, mu * e1, r, dt, maxsteps, vbar, *params)
        if res[0] < 0:
            raise IntegrationError("characteristic never reached the ball boundary")
        return res

    nodes = mesh.origin_boundary_nodes()
    pts = mesh.points[nodes]
    targets = np.arctan2(pts[:, 1] - x0[1], pts[:, 0] - x0[0])
    gvals = np.empty(len(nodes))
    for k, phi in enumerate(targets):
        miss = _wrap(cross - phi)
        nxt = np.roll(miss, -1)
        # brackets: sign change between consecutive headings, no wrap jump
        idx = np.flatnonzero((np.sign(miss) != np.sign(nxt)) & (np.abs(miss - nxt) < math.pi))
        best = math.inf
        for j in idx:
            t_hit, m_end = _refine_heading(crossing, headings, miss, j, phi, x0)
            # a jump of the crossing map (rays crossing inside the ball) is no root
            if abs(m_end) < 1e-9:
                best = min(best, t_hit)
        if not math.isfinite(best):
            raise IntegrationError(f"no characteristic reaches boundary node {nodes[k]}")
        gvals[k] = best
    ang = np.mod(targets - start, 2 * math.pi)
    return BoundaryOracle(x0, r, ang, gvals, "shooting")


def _refine_heading(crossing, headings, miss, j, phi, x0, tol=1e-14):
    """Heading in ``[headings[j], headings[j+1]]`` whose crossing hits ``phi``;
    returns the crossing time.  Inverse cubic interpolation through the fan
    gives the first guess, a bracketed secant iteration finishes."""
    n = len(headings)
    dh = 2 * math.pi / n
    a, b = headings[j], headings[j] + dh
    ma, mb = miss[j], miss[(j + 1) % n]
    if ma == 0.0:
        return crossing(a)[0], 0.0
    if mb == 0.0:
        return crossing(b)[0], 0.0
    ks = [(j + o) % n for o in (-1, 0, 1, 2)]
    hs = headings[j] + dh * np.array([-1.0, 0.0, 1.0, 2.0])
    ms = np.array([miss[k] for k in ks])
    if np.all(np.diff(ms) > 0) or np.all(np.diff(ms) < 0):
        guess = float(_lagrange_at_zero(ms, hs))
    else:
        guess = a - ma * (b - a) / (mb - ma)
    if not a < guess < b:
        guess = 0.5 * (a + b)

    def f(hd):
        res = crossing(hd)
        return float(_wrap(math.atan2(res[2] - x0[1], res[1] - x0[0]) - phi)), res[0]

    x1, (m1, t1) = guess, f(guess)
    x_prev, m_prev = (a, ma) if abs(a - guess) < abs(b - guess) else (b, mb)
    for _ in range(60):
        if abs(m1) <= tol or b - a <= 1e-15:
            break
        if np.sign(m1) == np.sign(ma):
            a, ma = x1, m1
        else:
            b, mb = x1, m1
        cand = x1 - m1 * (x1 - x_prev) / (m1 - m_prev) if m1 != m_prev else 0.5 * (a + b)
        if not a < cand < b:
            cand = 0.5 * (a + b)
        x_prev, m_prev = x1, m1
        x1 = cand
        m1, t1 = f(x1)
    return t1, m1


def _lagrange_at_zero(xs, ys):
    """Value at 0 of the polynomial through the points (xs_i, ys_i)."""
    total = 0.0
    for i in range(len(xs)):
        term = ys[i]
        for k in range(len(xs)):
            if k != i:
                term *= (0.0 - xs[k]) / (xs[i] - xs[k])
        total += term
    return total


def _wrap(a):
    return np.mod(np.asarray(a) + math.pi, 2 * math.pi) - math.pi


# ----------------------------------------------------------------------
# linearized flow and conjugate points


def variational_flow(xi, field: WindField, vbar: float, oracle: BoundaryOracle, T: float | None = None,
                     step: float | None = None, offset: float = 1e-4, fd_step: float = 1e-5,
                     box=((0.0, 0.0), (1.0, 1.0))) -> Characteristic:
    """Characteristic from ``xi`` on the ball boundary with its tangential
    linearization.

    The linear system for ``(y_xi, p_xi)`` uses second derivatives of H by
    central differences of the analytic gradients.  Its initial data is the
    tangential derivative of ``(xi, p0(xi))`` along the circle, taken as a
    forward difference with arc offset ``offset``; the same offset is used
    to relaunch a neighbouring characteristic as a cross-check of ``y_xi``.
    The first sign change of ``det[H_p, y_xi]`` is reported as the
    conjugate time (``None`` if there is none before ``T`` or box exit).
    """
    xi = np.asarray(xi, dtype=float)
    x0 = np.asarray(oracle.x0)
    r = np.linalg.norm(xi - x0)
    T = default_horizon(field, vbar) if T is None else T
    dt = default_step(field, T) if step is None else step
    nsteps = max(1, int(math.ceil(T / dt)))
    dt = T / nsteps

    ang = math.atan2(xi[1] - x0[1], xi[0] - x0[0])
    xi2 = x0 + r * np.array([math.cos(ang + offset / r), math.sin(ang + offset / r)])
    p0 = launch_covector(oracle, xi, field, vbar)
    p2 = launch_covector(oracle, xi2, field, vbar)
    dy0 = (xi2 - xi) / offset
    dp0 = (p2 - p0) / offset

    s0 = np.concatenate([xi, p0, dy0, dp0])
    out = nx.shoot_variational(s0, dt, nsteps, vbar, fd_step, *field.params)
    t = dt * np.arange(nsteps + 1)
    if box is not None:
        lo, hi = np.asarray(box[0]), np.asarray(box[1])
        inside = ((out[:, :2] >= lo) & (out[:, :2] <= hi)).all(axis=1)
        inside[0] = True
        stop = len(t) if inside.all() else int(np.argmin(inside))
        out, t = out[:stop], t[:stop]
    ch = Characteristic(t, out[:, :2].copy(), out[:, 2:4].copy(), out[:, 4:].copy(),
                        launch={"xi": xi.tolist(), "p0": p0.tolist(), "offset": offset})
    if len(t) < nsteps + 1:
        ch.exit_time = float(t[-1])

    hp = ch.ground_velocity(field, vbar)
    det = hp[:, 0] * out[:, 5] - hp[:, 1] * out[:, 4]
    # relaunched neighbour: forward difference of the paired flows
    s2 = np.array([xi2[0], xi2[1], p2[0], p2[1]])
    out2, n2 = nx.shoot_path(s2, dt, len(t) - 1, 0.0, 0.0, 1.0, 1.0, False, vbar, *field.params)
    n2 = abs(n2)
    ydiff = (out2[:n2, :2] - out[:n2, :2]) / offset
    det_fd = hp[:n2, 0] * ydiff[:, 1] - hp[:n2, 1] * ydiff[:, 0]
    ch.launch["det"] = det
    ch.launch["det_relaunch"] = det_fd
    ch.conjugate_time = _first_sign_change(t, det)
    return ch


def _first_sign_change(t, det):
    s = np.sign(det)
    k = np.flatnonzero(s[1:] * s[0] < 0)
    if len(k) == 0:
        return None
    k = k[0]
    # linear interpolation within the bracketing samples
    a, b = det[k], det[k + 1]
    return float(t[k] + (t[k + 1] - t[k]) * a / (a - b))


# ----------------------------------------------------------------------
# trajectories


def backtrack(values: ValueField, mesh: TriMesh, x_d, step: float | None = None,
              max_steps: int | None = None) -> Trajectory:
    """Optimal path to ``x_d`` recovered from the solver's predecessor field.

    The first hop is a Hopf-Lax minimization at ``x_d`` over the edges of
    its triangle.  From there the path follows, backwards, the inflow
    directions interpolated linearly from the nodal predecessor records
    (midpoint rule, step ``h/2``) until it reaches the ball boundary.
    Times along the polyline are the boundary time plus the ground time
    re-integrated segment by segment with the local wind.
    """
    x_d = np.asarray(x_d, dtype=float)
    x0 = np.asarray(mesh.x0)
    if mesh.r_K > 0 and np.linalg.norm(x_d - x0) < mesh.r_K:
        raise ValueError("destination lies inside the origin ball")
    tri, _ = mesh.locate(x_d)
    if tri[0] < 0:
        raise ValueError(f"destination {x_d.tolist()} is outside the meshed domain")
    field, vbar = values.field, values.vbar
    h = mesh.h
    step = 0.5 * h if step is None else step
    if max_steps is None:
        c0, _ = field.bounds()
        max_steps = int(20.0 * float(values.u.max()) * (vbar + c0) / step) + 100
    arrival = float(mesh.interpolate(values.u, x_d[None])[0])

    # virtual first hop over the containing triangle
    path = [x_d.copy()]
    y = _first_hop(values, mesh, x_d, tri[0])
    if y is not None and np.linalg.norm(y - x_d) > 1e-14:
        path.append(y)
    else:
        y = x_d.copy()
    r = mesh.r_K
    for _ in range(max_steps):
        if np.linalg.norm(y - x0) <= r * (1 + 1e-12):
            break
        d1 = _direction(values, mesh, y)
        if d1 is None:
            break
        mid = _clip(y - 0.5 * step * d1)
        d2 = _direction(values, mesh, mid)
        if d2 is None:
            d2 = d1
        y_new = _clip(y - step * d2)
        if np.linalg.norm(y_new - x0) <= r:
            y_new = _ray_circle(y, y_new, x0, r)
            path.append(y_new)
            y = y_new
            break
        path.append(y_new)
        y = y_new
    else:
        raise BacktrackError("backtracking did not reach the origin ball (cycle or unconverged field)")
    if np.linalg.norm(y - x0) > r * (1 + 1e-9):
        # left the triangulated region just outside the circle; finish radially
        y = x0 + r * (y - x0) / np.linalg.norm(y - x0)
        path.append(y)

    pts = np.array(path[::-1])
    seg = np.diff(pts, axis=0)
    mids = 0.5 * (pts[1:] + pts[:-1])
    w = field.eval_wind(mids)
    wd = np.sum(w * seg, axis=1)
    c = vbar ** 2 - np.sum(w * w, axis=1)
    dt = (-wd + np.sqrt(wd * wd + c * np.sum(seg * seg, axis=1))) / c
    t0 = float(values.oracle.g(pts[0])) if values.oracle is not None else 0.0
    times = t0 + np.concatenate([[0.0], np.cumsum(dt)])
    return Trajectory(pts, times, arrival, "predecessor-backtrack", boundary_point=pts[0],
                      info={"reintegrated_time": float(times[-1]), "segments": len(seg)})


def _first_hop(values, mesh, x, t):
    tri = mesh.triangles[t]
    w = values.field.eval_wind(x)
    c = values.vbar ** 2 - float(w @ w)
    best, by = math.inf, None
    for k in range(3):
        a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
        pa, pb = mesh.points[a], mesh.points[b]
        val, s = nx.edge_min(x[0], x[1], pa[0], pa[1], pb[0], pb[1],
                             values.u[a], values.u[b], w[0], w[1], c)
        if val < best:
            best, by = val, (1 - s) * pa + s * pb
    return by


def _direction(values, mesh, y):
    tri, bary = mesh.locate(y)
    if tri[0] < 0:
        return None
    d = bary[0] @ values.direction[mesh.triangles[tri[0]]]
    n = np.linalg.norm(d)
    if n < 1e-12:
        return None
    return d / n


def _clip(y):
    return np.clip(y, 0.0, 1.0)


def _ray_circle(a, b, c, r):
    """Point where the segment a -> b first enters the circle |x - c| = r."""
    d = b - a
    f = a - c
    A = d @ d
    B = 2 * f @ d
    C = f @ f - r * r
    disc = max(B * B - 4 * A * C, 0.0)
    s = (-B - math.sqrt(disc)) / (2 * A)
    s = min(max(s, 0.0), 1.0)
    p = a + s * d
    return c + r * (p - c) / np.linalg.norm(p - c)


def shoot_to_destination(oracle: BoundaryOracle, field: WindField, vbar: float, x_d,
                         xi_guess=None, T: float | None = None, step: float | None = None,
                         window: float = 0.4, n_window: int = 41) -> Trajectory:
    """Arrival time at ``x_d`` from a characteristic launched on the ball boundary.

    The launch point is found by root-finding on the signed miss distance
    of the characteristic at its closest approach to ``x_d``; the launch
    covector is ``g_x + mu nu`` from the boundary data.  Sign changes are
    sought on angular windows of several widths around ``xi_guess`` (e.g. the
    end of a backtrack); every root is an admissible path, so the earliest
    arrival among them is returned.
    """
    x_d = np.asarray(x_d, dtype=float)
    x0 = np.asarray(oracle.x0)
    r = oracle.r_K
    T = default_horizon(field, vbar) if T is None else T
    dt = default_step(field, T) if step is None else step
    maxsteps = int(math.ceil(T / dt))
    if xi_guess is None:
        xi_guess = x0 + r * (x_d - x0) / np.linalg.norm(x_d - x0)
    a0 = float(oracle.arc_angle(np.asarray(xi_guess)))
    amax = float(oracle.angles.max()) if not oracle._full else None

    cache = {}

    def run(a):
        if a not in cache:
            xi = oracle.point(a)
            p0 = launch_covector(oracle, xi, field, vbar)
            s0 = np.array([xi[0], xi[1], p0[0], p0[1]])
            cache[a] = nx.shoot_to_point(s0, dt, maxsteps, x_d[0], x_d[1], -0.5, -0.5, 1.5, 1.5,
                                         vbar, *field.params) + (xi,)
        return cache[a]

    # the miss oscillates rapidly in vortex arrays, so scan several window widths
    brackets = []
    for w in (window / 16, window / 4, window):
        lo_a = a0 - w if oracle._full else max(0.0, a0 - w)
        hi_a = a0 + w if oracle._full else min(amax, a0 + w)
        grid = np.unique(np.concatenate([np.linspace(lo_a, hi_a, n_window), [a0]]))
        res = [run(float(a)) for a in grid]
        for k in range(len(grid) - 1):
            (t1, m1), (t2, m2) = res[k][:2], res[k + 1][:2]
            if t1 >= 0 and t2 >= 0 and m1 * m2 <= 0 and abs(m1 - m2) < 0.5:
                brackets.append((abs(0.5 * (grid[k] + grid[k + 1]) - a0), grid[k], grid[k + 1]))
    if not brackets:
        raise IntegrationError(f"no characteristic from the boundary passes through {x_d.tolist()}")
    candidates = []
    for _, a, b in sorted(brackets):
        if run(float(a))[1] == 0.0:
            root = float(a)
        elif run(float(b))[1] == 0.0:
            root = float(b)
        else:
            root = brentq(lambda s: run(float(s))[1], a, b, xtol=1e-14, maxiter=200)
        t_hit, miss, *_rest = run(float(root))
        xi = _rest[-1]
        candidates.append((float(oracle.g(xi)) + t_hit, root, miss, xi, _rest[-2]))
    best = min(candidates, key=lambda c: c[0])
    arrival, root, miss, xi, hmax = best
    p0 = launch_covector(oracle, xi, field, vbar)
    ch = shoot(xi, p0, arrival - float(oracle.g(xi)), field, vbar, step=dt, box=None, normalize=False)
    times = float(oracle.g(xi)) + ch.t
    pts = ch.y
    return Trajectory(pts, times, float(arrival), "shooting", boundary_point=xi,
                      info={"miss": float(miss), "max_abs_H": float(hmax), "brackets": len(brackets),
                            "max_abs_H_path": float(np.abs(ch.hamiltonian(field, vbar)).max())})
