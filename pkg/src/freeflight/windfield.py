"""Stationary planar wind models with analytic Jacobians and global bounds.

A :class:`WindField` is a constant background vector plus a sum of Gaussian
vortices.  Each vortex has the tangential profile

    wbar(r) = gamma * (beta r / R) * exp(-beta^2 r^2 / R^2),   r = |x - z|

rotated by 90 degrees (counter-clockwise for spin +1), multiplied by a
per-vortex ``scale``.  With ``gamma = sqrt(2 e)`` the unscaled peak is 1,
reached at ``beta r / R = 1/sqrt(2)``, so ``scale`` is the peak magnitude.

All parameters are stored as flat numpy arrays so the numba kernels in
:mod:`freeflight._numerics` can evaluate the field without Python overhead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from freeflight import _numerics as nx

GAMMA_DEFAULT = math.sqrt(2.0 * math.e)
BETA_DEFAULT = 3.0
SCALE_DEFAULT = 0.5

# relative safety margin on sampled suprema for multi-vortex fields
SAMPLING_MARGIN = 0.05


@dataclass(frozen=True)
class Vortex:
    center: tuple[float, float]
    spin: int = -1
    R: float = 1.0 / 3.0
    beta: float = BETA_DEFAULT
    gamma: float = GAMMA_DEFAULT
    scale: float = SCALE_DEFAULT

    def __post_init__(self):
        if self.spin not in (-1, 1):
            raise ValueError(f"vortex spin must be +1 or -1, got {self.spin}")
        if not (self.R > 0 and self.beta > 0):
            raise ValueError("vortex radius R and shape beta must be positive")

    @property
    def peak_speed(self) -> float:
        # max_t gamma * t * exp(-t^2) at t = 1/sqrt(2)
        return abs(self.scale) * self.gamma * math.exp(-0.5) / math.sqrt(2.0)

    @property
    def peak_rate(self) -> float:
        # |w_x| = scale*gamma*beta/R * exp(-t^2) * max(1, |1 - 2 t^2|), maximal at t = 0
        return abs(self.scale) * self.gamma * self.beta / self.R

    def flipped(self) -> Vortex:
        return Vortex(self.center, -self.spin, self.R, self.beta, self.gamma, self.scale)


@dataclass(frozen=True)
class WindField:
    """Constant vector plus a (possibly empty) array of Gaussian vortices.

    Instances are immutable; evaluation is pure and thread-safe.
    """

    constant: tuple[float, float] = (0.0, 0.0)
    vortices: tuple[Vortex, ...] = ()
    name: str = ""
    _params: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "constant", (float(self.constant[0]), float(self.constant[1])))
        object.__setattr__(self, "vortices", tuple(self.vortices))
        k = len(self.vortices)
        centers = np.array([v.center for v in self.vortices], dtype=float).reshape(k, 2)
        params = (
            np.array(self.constant, dtype=float),
            centers,
            np.array([v.spin for v in self.vortices], dtype=float),
            np.array([v.R for v in self.vortices], dtype=float),
            np.array([v.beta for v in self.vortices], dtype=float),
            np.array([v.gamma for v in self.vortices], dtype=float),
            np.array([v.scale for v in self.vortices], dtype=float),
        )
        for arr in params:
            arr.setflags(write=False)
        object.__setattr__(self, "_params", params)

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def zero(cls) -> WindField:
        return cls(name="zero")

    @classmethod
    def uniform(cls, w) -> WindField:
        return cls(constant=tuple(w), name="constant")

    @classmethod
    def single_vortex(cls, center=(0.5, 0.5), spin=-1, R=1.0 / 3.0, beta=BETA_DEFAULT,
                      gamma=GAMMA_DEFAULT, scale=SCALE_DEFAULT) -> WindField:
        return cls(vortices=(Vortex(tuple(center), spin, R, beta, gamma, scale),), name="vortex")

    @classmethod
    def vortex_grid(cls, nx_: int, ny_: int, xs, ys, R: float, scale=SCALE_DEFAULT,
                    beta=BETA_DEFAULT, gamma=GAMMA_DEFAULT, first_spin=-1) -> WindField:
        """Rectangular ``nx_ x ny_`` array with checkerboard-alternating spins."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.shape != (nx_,) or ys.shape != (ny_,):
            raise ValueError("center coordinate arrays do not match the grid shape")
        vs = []
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                spin = first_spin * (-1) ** (i + j)
                vs.append(Vortex((float(x), float(y)), int(spin), R, beta, gamma, scale))
        return cls(vortices=tuple(vs), name="vortex_array")

    def spin_flipped(self) -> WindField:
        return WindField(self.constant, tuple(v.flipped() for v in self.vortices), self.name)

    # ------------------------------------------------------------------
    # evaluation

    @property
    def params(self) -> tuple:
        """Flat parameter arrays consumed by the numba kernels."""
        return self._params

    def eval_wind(self, x) -> np.ndarray:
        """Wind vector(s) at ``x`` of shape ``(..., 2)``."""
        x = np.asarray(x, dtype=float)
        pts = np.ascontiguousarray(x.reshape(-1, 2))
        out = nx.wind_many(pts, *self._params)
        return out.reshape(x.shape)

    def eval_jacobian(self, x) -> np.ndarray:
        """Jacobian ``dw_i/dx_j`` at ``x``; shape ``(..., 2, 2)``."""
        x = np.asarray(x, dtype=float)
        pts = np.ascontiguousarray(x.reshape(-1, 2))
        out = nx.jacobian_many(pts, *self._params)
        return out.reshape(x.shape[:-1] + (2, 2))

    def bounds(self) -> tuple[float, float]:
        """Upper bounds ``(c0, c1)`` on ``sup |w|`` and ``sup |w_x|`` (operator norm)."""
        return self._bounds

    @cached_property
    def _bounds(self) -> tuple[float, float]:
        c = float(np.hypot(*self.constant))
        if not self.vortices:
            return c, 0.0
        if len(self.vortices) == 1:
            v = self.vortices[0]
            return c + v.peak_speed, v.peak_rate
        s0, s1 = self._sampled_suprema()
        sum0 = c + sum(v.peak_speed for v in self.vortices)
        sum1 = sum(v.peak_rate for v in self.vortices)
        return (min(sum0, (1.0 + SAMPLING_MARGIN) * s0),
                min(sum1, (1.0 + SAMPLING_MARGIN) * s1))

    def _sampled_suprema(self, n: int = 1001) -> tuple[float, float]:
        centers = np.array([v.center for v in self.vortices])
        reach = max(v.R for v in self.vortices)
        lo = centers.min(axis=0) - reach
        hi = centers.max(axis=0) + reach
        gx = np.linspace(lo[0], hi[0], n)
        gy = np.linspace(lo[1], hi[1], n)
        pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        # vortex centers carry the Jacobian peak; include them explicitly
        pts = np.vstack([pts, centers])
        speed = np.linalg.norm(self.eval_wind(pts), axis=1).max()
        rate = np.linalg.norm(self.eval_jacobian(pts), ord=2, axis=(1, 2)).max()
        return float(speed), float(rate)

    # ------------------------------------------------------------------
    # config io

    def to_dict(self) -> dict:
        if self.vortices and any(self.constant):
            kind = "mixed"
        elif self.vortices:
            kind = "vortex_array"
        else:
            kind = "constant"
        d: dict = {"type": kind}
        if kind != "vortex_array":
            d["w"] = list(self.constant)
        if self.vortices:
            d["vortices"] = [
                {"center": list(v.center), "spin": v.spin, "R": v.R, "beta": v.beta,
                 "gamma": v.gamma, "scale": v.scale}
                for v in self.vortices
            ]
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: dict) -> WindField:
        kind = d.get("type")
        if kind not in ("constant", "vortex", "vortex_array", "mixed"):
            raise ValueError(f"unknown wind type {kind!r}")
        constant = tuple(d.get("w", (0.0, 0.0)))
        if len(constant) != 2:
            raise ValueError("constant wind must have two components")
        vs = []
        for v in d.get("vortices", []):
            vs.append(Vortex(
                center=tuple(v["center"]),
                spin=int(v.get("spin", -1)),
                R=float(v.get("R", 1.0 / 3.0)),
                beta=float(v.get("beta", BETA_DEFAULT)),
                gamma=float(v.get("gamma", GAMMA_DEFAULT)),
                scale=float(v.get("scale", SCALE_DEFAULT)),
            ))
        if kind == "vortex" and len(vs) != 1:
            raise ValueError("type 'vortex' expects exactly one vortex")
        return cls(constant=constant, vortices=tuple(vs), name=d.get("name", kind))

    @classmethod
    def load(cls, path) -> WindField:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# test cases

def case_a(c0: float = 0.5) -> WindField:
    """Constant wind ``c0 * [1, -2] / sqrt(5)``."""
    w = c0 * np.array([1.0, -2.0]) / math.sqrt(5.0)
    return WindField(constant=(w[0], w[1]), name="case_a")


def case_b(spin: int = -1, scale: float = SCALE_DEFAULT) -> WindField:
    """Single Gaussian vortex at (0.5, 0.5), R = 1/3, clockwise by default."""
    f = WindField.single_vortex((0.5, 0.5), spin=spin, R=1.0 / 3.0, scale=scale)
    return WindField(f.constant, f.vortices, name="case_b")


def case_c(scale: float = SCALE_DEFAULT) -> WindField:
    """15 vortices on a 5 x 3 grid with spacing 0.2 from (0.1, 0.17), R = 0.08."""
    f = WindField.vortex_grid(5, 3, 0.1 + 0.2 * np.arange(5), 0.17 + 0.2 * np.arange(3), R=0.08, scale=scale)
    return WindField(f.constant, f.vortices, name="case_c")


def case_d(scale: float = SCALE_DEFAULT) -> WindField:
    """70 vortices on a 10 x 7 grid, R = 0.045."""
    f = WindField.vortex_grid(10, 7, 0.05 + 0.1 * np.arange(10), (0.5 + np.arange(7)) / 7.0,
                              R=0.045, scale=scale)
    return WindField(f.constant, f.vortices, name="case_d")


CASES = {"a": case_a, "b": case_b, "c": case_c, "d": case_d}


def sample_grid(field_: WindField, n: int, lo=(0.0, 0.0), hi=(1.0, 1.0)) -> np.ndarray:
    """Rows ``(x, y, wx, wy)`` on an ``n x n`` grid, x fastest."""
    gx = np.linspace(lo[0], hi[0], n)
    gy = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(gx, gy, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return np.column_stack([pts, field_.eval_wind(pts)])
