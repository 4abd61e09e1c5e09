"""Pointwise Zermelo algebra: ground speed, slowness, Hamiltonian.

An aircraft with airspeed ``vbar`` in wind ``w`` that wants to make ground
track along the unit direction ``p`` achieves the ground speed

    f(p) = sqrt(vbar^2 - |w|^2 + (w.p)^2) + w.p .

The Hamiltonian of the time-optimal problem is

    H(x, p) = max_{|e|=1} f(x, e) e.p - 1 = vbar |p| + w(x).p - 1 ,

i.e. the support function of the set of reachable ground velocities
``{vbar b + w : |b| = 1}`` minus one.
"""

from __future__ import annotations

import math

import numpy as np

from freeflight.windfield import WindField


class ModelViolation(ValueError):
    """Wind at least as fast as the airspeed; flight against it is infeasible."""


def _check_wind(w, vbar):
    wn = np.linalg.norm(w, axis=-1)
    if vbar <= 0:
        raise ModelViolation(f"airspeed must be positive, got {vbar}")
    if np.any(wn >= vbar):
        raise ModelViolation(f"wind speed {float(np.max(wn))} is not below airspeed {vbar}")
    return wn


def _check_unit(p):
    if np.any(np.abs(np.linalg.norm(p, axis=-1) - 1.0) > 1e-12):
        raise ValueError("direction p must have unit length")


def ground_speed(p, w, vbar: float = 1.0):
    """Ground speed along unit direction(s) ``p`` in wind ``w``."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = _check_wind(w, vbar)
    _check_unit(p)
    wp = np.sum(w * p, axis=-1)
    return np.sqrt(vbar * vbar - wn * wn + wp * wp) + wp


def slowness(p, w, vbar: float = 1.0):
    """Reciprocal ground speed, in a form free of cancellation near tailwind."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = _check_wind(w, vbar)
    _check_unit(p)
    wp = np.sum(w * p, axis=-1)
    c = vbar * vbar - wn * wn
    return (-wp + np.sqrt(c + wp * wp)) / c


def travel_time(d, w, vbar: float = 1.0):
    """Time to cover the ground displacement ``d`` in constant wind ``w``."""
    d = np.asarray(d, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = _check_wind(w, vbar)
    c = vbar * vbar - wn * wn
    wd = np.sum(w * d, axis=-1)
    return (-wd + np.sqrt(wd * wd + c * np.sum(d * d, axis=-1))) / c


def hamiltonian(x, p, field: WindField, vbar: float = 1.0):
    """Closed-form ``H(x, p) = vbar |p| + w(x).p - 1``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    w = field.eval_wind(x)
    _check_wind(w, vbar)
    return vbar * np.linalg.norm(p, axis=-1) + np.sum(w * p, axis=-1) - 1.0


def hamiltonian_gradients(x, p, field: WindField, vbar: float = 1.0):
    """Return ``(H_x, H_p)``; ``H_p`` is the optimal ground velocity."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    pn = np.linalg.norm(p, axis=-1, keepdims=True)
    if np.any(pn < 1e-300):
        raise ValueError("hamiltonian gradients are undefined at p = 0")
    w = field.eval_wind(x)
    _check_wind(w, vbar)
    J = field.eval_jacobian(x)
    h_x = np.einsum("...ij,...i->...j", J, p)
    h_p = vbar * p / pn + w
    return h_x, h_p


def lipschitz_bound(vbar: float, c0: float, c1: float) -> float:
    """Direction-uniform Lipschitz constant of the slowness in x."""
    if not c0 < vbar:
        raise ModelViolation(f"wind bound {c0} is not below airspeed {vbar}")
    if c0 < 0 or c1 < 0:
        raise ValueError("wind bounds must be non-negative")
    return c1 * math.sqrt(vbar / (vbar - c0) ** 5)
