"""Compiled inner loops: wind evaluation, Hamiltonian flow, Hopf-Lax updates.

Wind parameters are passed as the flat tuple produced by
``WindField.params``: ``(const, centers, spins, R, beta, gamma, scale)``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

N_SCAN = 17  # coarse samples per edge, including both endpoints
GOLDEN_TOL = 1e-12
# vortices farther than sqrt(EXP_CUTOFF) R / beta contribute below 1e-20
EXP_CUTOFF = 60.0
INV_PHI = 0.5 * (math.sqrt(5.0) - 1.0)


# ----------------------------------------------------------------------
# wind


@njit(cache=True)
def wind_at(x, y, const, centers, spins, R, beta, gamma, scale):
    wx = const[0]
    wy = const[1]
    for k in range(centers.shape[0]):
        dx = x - centers[k, 0]
        dy = y - centers[k, 1]
        b_over_r = beta[k] / R[k]
        t2 = b_over_r * b_over_r * (dx * dx + dy * dy)
        if t2 > EXP_CUTOFF:
            continue
        amp = spins[k] * scale[k] * gamma[k] * b_over_r * math.exp(-t2)
        wx -= amp * dy
        wy += amp * dx
    return wx, wy


@njit(cache=True)
def jac_at(x, y, const, centers, spins, R, beta, gamma, scale):
    """Return ``(dwx/dx, dwx/dy, dwy/dx, dwy/dy)``."""
    j00 = 0.0
    j01 = 0.0
    j10 = 0.0
    j11 = 0.0
    for k in range(centers.shape[0]):
        dx = x - centers[k, 0]
        dy = y - centers[k, 1]
        b_over_r = beta[k] / R[k]
        a = 2.0 * b_over_r * b_over_r
        t2 = b_over_r * b_over_r * (dx * dx + dy * dy)
        if t2 > EXP_CUTOFF:
            continue
        amp = spins[k] * scale[k] * gamma[k] * b_over_r * math.exp(-t2)
        j00 += amp * a * dx * dy
        j01 += amp * (a * dy * dy - 1.0)
        j10 += amp * (1.0 - a * dx * dx)
        j11 -= amp * a * dx * dy
    return j00, j01, j10, j11


@njit(cache=True)
def wind_many(pts, const, centers, spins, R, beta, gamma, scale):
    out = np.empty_like(pts)
    for i in range(pts.shape[0]):
        wx, wy = wind_at(pts[i, 0], pts[i, 1], const, centers, spins, R, beta, gamma, scale)
        out[i, 0] = wx
        out[i, 1] = wy
    return out


@njit(cache=True)
def jacobian_many(pts, const, centers, spins, R, beta, gamma, scale):
    out = np.empty((pts.shape[0], 2, 2))
    for i in range(pts.shape[0]):
        j00, j01, j10, j11 = jac_at(pts[i, 0], pts[i, 1], const, centers, spins, R, beta, gamma, scale)
        out[i, 0, 0] = j00
        out[i, 0, 1] = j01
        out[i, 1, 0] = j10
        out[i, 1, 1] = j11
    return out


# ----------------------------------------------------------------------
# Hamiltonian  H(x, p) = vbar |p| + w(x).p - 1


@njit(cache=True)
def ham(x, y, p0, p1, vbar, const, centers, spins, R, beta, gamma, scale):
    wx, wy = wind_at(x, y, const, centers, spins, R, beta, gamma, scale)
    return vbar * math.sqrt(p0 * p0 + p1 * p1) + wx * p0 + wy * p1 - 1.0


@njit(cache=True)
def ham_grads(x, y, p0, p1, vbar, const, centers, spins, R, beta, gamma, scale):
    """Return ``(Hx0, Hx1, Hp0, Hp1)``."""
    wx, wy = wind_at(x, y, const, centers, spins, R, beta, gamma, scale)
    j00, j01, j10, j11 = jac_at(x, y, const, centers, spins, R, beta, gamma, scale)
    pn = math.sqrt(p0 * p0 + p1 * p1)
    hp0 = vbar * p0 / pn + wx
    hp1 = vbar * p1 / pn + wy
    hx0 = j00 * p0 + j10 * p1
    hx1 = j01 * p0 + j11 * p1
    return hx0, hx1, hp0, hp1


@njit(cache=True)
def _flow_rhs(s, vbar, const, centers, spins, R, beta, gamma, scale, out):
    hx0, hx1, hp0, hp1 = ham_grads(s[0], s[1], s[2], s[3], vbar, const, centers, spins, R, beta, gamma, scale)
    out[0] = hp0
    out[1] = hp1
    out[2] = -hx0
    out[3] = -hx1


@njit(cache=True)
def rk4_step(s, dt, vbar, const, centers, spins, R, beta, gamma, scale):
    inc = rk4_increment(s, dt, vbar, const, centers, spins, R, beta, gamma, scale)
    out = np.empty(4)
    for i in range(4):
        out[i] = s[i] + inc[i]
    return out


@njit(cache=True)
def rk4_increment(s, dt, vbar, const, centers, spins, R, beta, gamma, scale):
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    _flow_rhs(s, vbar, const, centers, spins, R, beta, gamma, scale, k1)
    for i in range(4):
        tmp[i] = s[i] + 0.5 * dt * k1[i]
    _flow_rhs(tmp, vbar, const, centers, spins, R, beta, gamma, scale, k2)
    for i in range(4):
        tmp[i] = s[i] + 0.5 * dt * k2[i]
    _flow_rhs(tmp, vbar, const, centers, spins, R, beta, gamma, scale, k3)
    for i in range(4):
        tmp[i] = s[i] + dt * k3[i]
    _flow_rhs(tmp, vbar, const, centers, spins, R, beta, gamma, scale, k4)
    out = np.empty(4)
    for i in range(4):
        out[i] = dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@njit(cache=True)
def shoot_path(s0, dt, nsteps, lo0, lo1, hi0, hi1, check_box, vbar,
               const, centers, spins, R, beta, gamma, scale):
    """Fixed-step RK4. Returns ``(samples, nvalid)``; stops early on box exit.

    The state is accumulated with compensated summation so long shots do
    not drift by round-off.  On box exit the first outside sample is kept.
    """
    out = np.empty((nsteps + 1, 4))
    out[0] = s0
    s = s0.copy()
    comp = np.zeros(4)
    for k in range(nsteps):
        inc = rk4_increment(s, dt, vbar, const, centers, spins, R, beta, gamma, scale)
        for i in range(4):
            y = inc[i] - comp[i]
            t = s[i] + y
            comp[i] = (t - s[i]) - y
            s[i] = t
        out[k + 1] = s
        if check_box and (s[0] < lo0 or s[0] > hi0 or s[1] < lo1 or s[1] > hi1):
            return out, k + 2
        if s[2] * s[2] + s[3] * s[3] < 1e-16:
            return out, -(k + 2)
    return out, nsteps + 1


@njit(cache=True)
def shoot_to_circle(x0, y0, p0, p1, radius, dt, maxsteps, vbar,
                    const, centers, spins, R, beta, gamma, scale):
    """Integrate from (x0, y0) until |y - (x0, y0)| reaches ``radius``.

    Returns ``(t, y0, y1, p0, p1)`` at the crossing, or ``t = -1`` on failure.
    The crossing step is refined by bisection on the step length.
    """
    s = np.empty(4)
    s[0] = x0
    s[1] = y0
    s[2] = p0
    s[3] = p1
    t = 0.0
    r2 = radius * radius
    for _ in range(maxsteps):
        sn = rk4_step(s, dt, vbar, const, centers, spins, R, beta, gamma, scale)
        d2 = (sn[0] - x0) ** 2 + (sn[1] - y0) ** 2
        if d2 >= r2:
            lo = 0.0
            hi = dt
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                sm = rk4_step(s, mid, vbar, const, centers, spins, R, beta, gamma, scale)
                if (sm[0] - x0) ** 2 + (sm[1] - y0) ** 2 >= r2:
                    hi = mid
                else:
                    lo = mid
                if hi - lo < 1e-16:
                    break
            sm = rk4_step(s, hi, vbar, const, centers, spins, R, beta, gamma, scale)
            return t + hi, sm[0], sm[1], sm[2], sm[3]
        s = sn
        t += dt
    return -1.0, s[0], s[1], s[2], s[3]


@njit(cache=True)
def shoot_fan(x0, y0, angles, radius, dt, maxsteps, vbar,
              const, centers, spins, R, beta, gamma, scale):
    """Shoot one H=0 characteristic per covector angle to the circle."""
    n = angles.shape[0]
    out = np.empty((n, 5))
    wx, wy = wind_at(x0, y0, const, centers, spins, R, beta, gamma, scale)
    for i in range(n):
        e0 = math.cos(angles[i])
        e1 = math.sin(angles[i])
        mu = 1.0 / (vbar + wx * e0 + wy * e1)
        t, a, b, c, d = shoot_to_circle(x0, y0, mu * e0, mu * e1, radius, dt, maxsteps, vbar,
                                        const, centers, spins, R, beta, gamma, scale)
        out[i, 0] = t
        out[i, 1] = a
        out[i, 2] = b
        out[i, 3] = c
        out[i, 4] = d
    return out


# ----------------------------------------------------------------------
# variational flow


@njit(cache=True)
def _second_derivs(x, y, p0, p1, vbar, h, const, centers, spins, R, beta, gamma, scale, M):
    """Fill the 4x4 matrix [[H_px, H_pp], [-H_xx, -H_xp]] by central differences."""
    # column j: derivative of (Hp, -Hx) w.r.t. z_j, z = (x, y, p0, p1)
    z = np.empty(4)
    z[0] = x
    z[1] = y
    z[2] = p0
    z[3] = p1
    for j in range(4):
        zp = z.copy()
        zm = z.copy()
        zp[j] += h
        zm[j] -= h
        a0, a1, a2, a3 = ham_grads(zp[0], zp[1], zp[2], zp[3], vbar, const, centers, spins, R, beta, gamma, scale)
        b0, b1, b2, b3 = ham_grads(zm[0], zm[1], zm[2], zm[3], vbar, const, centers, spins, R, beta, gamma, scale)
        M[0, j] = (a2 - b2) / (2 * h)
        M[1, j] = (a3 - b3) / (2 * h)
        M[2, j] = -(a0 - b0) / (2 * h)
        M[3, j] = -(a1 - b1) / (2 * h)


@njit(cache=True)
def _var_rhs(s, vbar, h, const, centers, spins, R, beta, gamma, scale, out, M):
    hx0, hx1, hp0, hp1 = ham_grads(s[0], s[1], s[2], s[3], vbar, const, centers, spins, R, beta, gamma, scale)
    out[0] = hp0
    out[1] = hp1
    out[2] = -hx0
    out[3] = -hx1
    _second_derivs(s[0], s[1], s[2], s[3], vbar, h, const, centers, spins, R, beta, gamma, scale, M)
    for i in range(4):
        acc = 0.0
        for j in range(4):
            acc += M[i, j] * s[4 + j]
        out[4 + i] = acc


@njit(cache=True)
def shoot_variational(s0, dt, nsteps, vbar, h, const, centers, spins, R, beta, gamma, scale):
    """RK4 on the 8-vector (y, p, dy, dp) of the flow and its linearization."""
    out = np.empty((nsteps + 1, 8))
    out[0] = s0
    s = s0.copy()
    M = np.empty((4, 4))
    k1 = np.empty(8)
    k2 = np.empty(8)
    k3 = np.empty(8)
    k4 = np.empty(8)
    tmp = np.empty(8)
    for k in range(nsteps):
        _var_rhs(s, vbar, h, const, centers, spins, R, beta, gamma, scale, k1, M)
        for i in range(8):
            tmp[i] = s[i] + 0.5 * dt * k1[i]
        _var_rhs(tmp, vbar, h, const, centers, spins, R, beta, gamma, scale, k2, M)
        for i in range(8):
            tmp[i] = s[i] + 0.5 * dt * k2[i]
        _var_rhs(tmp, vbar, h, const, centers, spins, R, beta, gamma, scale, k3, M)
        for i in range(8):
            tmp[i] = s[i] + dt * k3[i]
        _var_rhs(tmp, vbar, h, const, centers, spins, R, beta, gamma, scale, k4, M)
        for i in range(8):
            s[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        out[k + 1] = s
    return out


# ----------------------------------------------------------------------
# Hopf-Lax update


@njit(cache=True)
def travel_time(dx, dy, wx, wy, c):
    """Time to cover displacement (dx, dy) at airspeed sqrt(c + |w|^2) in constant wind w.

    ``c = vbar^2 - |w|^2``; this is |d| times the rationalized slowness.
    """
    wd = wx * dx + wy * dy
    return (-wd + math.sqrt(wd * wd + c * (dx * dx + dy * dy))) / c


@njit(cache=True)
def edge_min(px, py, ax, ay, bx, by, va, vb, wx, wy, c):
    """Minimize v(y(s)) + time(y(s) -> p) over s in [0, 1], y(s) = a + s (b - a).

    Coarse scan on ``N_SCAN`` points, then golden-section search on the
    bracket around the best sample.  Returns ``(value, s)``.
    """
    ex = bx - ax
    ey = by - ay
    dv = vb - va
    rx = px - ax
    ry = py - ay
    best = 1e300
    kbest = 0
    for k in range(N_SCAN):
        s = k / (N_SCAN - 1.0)
        f = va + s * dv + travel_time(rx - s * ex, ry - s * ey, wx, wy, c)
        if f < best:
            best = f
            kbest = k
    sbest = kbest / (N_SCAN - 1.0)
    lo = max(0.0, (kbest - 1) / (N_SCAN - 1.0))
    hi = min(1.0, (kbest + 1) / (N_SCAN - 1.0))
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1 = va + x1 * dv + travel_time(rx - x1 * ex, ry - x1 * ey, wx, wy, c)
    f2 = va + x2 * dv + travel_time(rx - x2 * ex, ry - x2 * ey, wx, wy, c)
    while hi - lo > GOLDEN_TOL:
        if f1 <= f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - INV_PHI * (hi - lo)
            f1 = va + x1 * dv + travel_time(rx - x1 * ex, ry - x1 * ey, wx, wy, c)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + INV_PHI * (hi - lo)
            f2 = va + x2 * dv + travel_time(rx - x2 * ex, ry - x2 * ey, wx, wy, c)
    if f1 < best:
        best = f1
        sbest = x1
    if f2 < best:
        best = f2
        sbest = x2
    return best, sbest


@njit(cache=True)
def _seg_dist(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    L2 = ex * ex + ey * ey
    s = ((px - ax) * ex + (py - ay) * ey) / L2
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    dx = px - ax - s * ex
    dy = py - ay - s * ey
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True)
def node_update(i, u, pts, fe_ptr, fe, wind, vbar, sentinel):
    """Hopf-Lax value at node i. Returns ``(value, edge_index, s)``; edge -1 if unreached."""
    px = pts[i, 0]
    py = pts[i, 1]
    wx = wind[i, 0]
    wy = wind[i, 1]
    wn = math.sqrt(wx * wx + wy * wy)
    c = vbar * vbar - wn * wn
    fastest = vbar + wn
    best = sentinel
    bedge = -1
    bs = 0.0
    for j in range(fe_ptr[i], fe_ptr[i + 1]):
        a = fe[j, 0]
        b = fe[j, 1]
        va = u[a]
        vb = u[b]
        if va >= sentinel and vb >= sentinel:
            continue
        lower = min(va, vb) + _seg_dist(px, py, pts[a, 0], pts[a, 1], pts[b, 0], pts[b, 1]) / fastest
        if lower >= best:
            continue
        val, s = edge_min(px, py, pts[a, 0], pts[a, 1], pts[b, 0], pts[b, 1], va, vb, wx, wy, c)
        if val < best:
            best = val
            bedge = j
            bs = s
    return best, bedge, bs


@njit(cache=True)
def jacobi_sweep(active, u, pts, fe_ptr, fe, wind, vbar, sentinel,
                 nbr_ptr, nbr, fixed, thr, flag):
    """One Jacobi sweep over ``active`` reading a snapshot of ``u``.

    Updates ``u`` in place after all new values are computed.  Returns
    ``(next_active, max_abs_change)``; the next active set holds the
    non-fixed neighbours (and the nodes themselves) of every node that
    moved by more than ``thr``.
    """
    n = active.shape[0]
    new = np.empty(n)
    for k in range(n):
        v, _, _ = node_update(active[k], u, pts, fe_ptr, fe, wind, vbar, sentinel)
        new[k] = v
    maxch = 0.0
    count = 0
    for k in range(n):
        i = active[k]
        # exact updates never increase; drop round-off increases of the minimizer
        v = min(new[k], u[i])
        ch = u[i] - v
        if ch > maxch:
            maxch = ch
        u[i] = v
        if ch > thr:
            if not fixed[i] and flag[i] == 0:
                flag[i] = 1
                count += 1
            for q in range(nbr_ptr[i], nbr_ptr[i + 1]):
                j = nbr[q]
                if not fixed[j] and flag[j] == 0:
                    flag[j] = 1
                    count += 1
    nxt = np.empty(count, dtype=np.int64)
    m = 0
    for k in range(n):
        i = active[k]
        if flag[i] == 1:
            nxt[m] = i
            m += 1
            flag[i] = 2
        for q in range(nbr_ptr[i], nbr_ptr[i + 1]):
            j = nbr[q]
            if flag[j] == 1:
                nxt[m] = j
                m += 1
                flag[j] = 2
    for k in range(m):
        flag[nxt[k]] = 0
    nxt.sort()
    return nxt, maxch


@njit(cache=True)
def gauss_seidel_sweep(order, u, pts, fe_ptr, fe, wind, vbar, sentinel):
    maxch = 0.0
    for k in range(order.shape[0]):
        i = order[k]
        v, _, _ = node_update(i, u, pts, fe_ptr, fe, wind, vbar, sentinel)
        v = min(v, u[i])
        ch = u[i] - v
        if ch > maxch:
            maxch = ch
        u[i] = v
    return maxch


@njit(cache=True)
def record_pass(nodes, u, pts, fe_ptr, fe, wind, vbar, sentinel):
    """Evaluate the update at ``nodes`` without writing; return values, edges, params."""
    n = nodes.shape[0]
    vals = np.empty(n)
    edges = np.empty(n, dtype=np.int64)
    ss = np.empty(n)
    for k in range(n):
        v, e, s = node_update(nodes[k], u, pts, fe_ptr, fe, wind, vbar, sentinel)
        vals[k] = v
        edges[k] = e
        ss[k] = s
    return vals, edges, ss


@njit(cache=True)
def _approach(s, xd0, xd1, vbar, const, centers, spins, R, beta, gamma, scale):
    """(x_d - y) . H_p: positive while the path still approaches x_d."""
    _, _, hp0, hp1 = ham_grads(s[0], s[1], s[2], s[3], vbar, const, centers, spins, R, beta, gamma, scale)
    return (xd0 - s[0]) * hp0 + (xd1 - s[1]) * hp1, hp0, hp1


@njit(cache=True)
def shoot_to_point(s0, dt, maxsteps, xd0, xd1, lo0, lo1, hi0, hi1, vbar,
                   const, centers, spins, R, beta, gamma, scale):
    """Integrate until the closest approach to (xd0, xd1).

    Returns ``(t, miss, y0, y1, p0, p1, maxabsH)`` where ``miss`` is the
    signed distance of the target from the path (positive on the left of
    the ground velocity).  ``t = -1`` if the box is left first.
    """
    s = s0.copy()
    t = 0.0
    hmax = abs(ham(s[0], s[1], s[2], s[3], vbar, const, centers, spins, R, beta, gamma, scale))
    for _ in range(maxsteps):
        sn = rk4_step(s, dt, vbar, const, centers, spins, R, beta, gamma, scale)
        hv = abs(ham(sn[0], sn[1], sn[2], sn[3], vbar, const, centers, spins, R, beta, gamma, scale))
        if hv > hmax:
            hmax = hv
        a, _, _ = _approach(sn, xd0, xd1, vbar, const, centers, spins, R, beta, gamma, scale)
        if a <= 0.0:
            lo = 0.0
            hi = dt
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                sm = rk4_step(s, mid, vbar, const, centers, spins, R, beta, gamma, scale)
                am, _, _ = _approach(sm, xd0, xd1, vbar, const, centers, spins, R, beta, gamma, scale)
                if am <= 0.0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo < 1e-16:
                    break
            sm = rk4_step(s, 0.5 * (lo + hi), vbar, const, centers, spins, R, beta, gamma, scale)
            _, hp0, hp1 = _approach(sm, xd0, xd1, vbar, const, centers, spins, R, beta, gamma, scale)
            hn = math.sqrt(hp0 * hp0 + hp1 * hp1)
            miss = (hp0 * (xd1 - sm[1]) - hp1 * (xd0 - sm[0])) / hn
            return t + 0.5 * (lo + hi), miss, sm[0], sm[1], sm[2], sm[3], hmax
        s = sn
        t += dt
        if s[0] < lo0 or s[0] > hi0 or s[1] < lo1 or s[1] > hi1:
            break
    return -1.0, 0.0, s[0], s[1], s[2], s[3], hmax
