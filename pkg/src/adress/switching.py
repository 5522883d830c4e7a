"""Resolution switching function lambda(X) and the FG / hybrid / CG layout.

The FG region is the slab ``|X - X_m| <= h`` (periodic distance along x), a
hybrid zone of width ``L`` surrounds it on both sides, and everything beyond
``h + L`` is CG. Inside the hybrid zone::

    lambda = cos^2((pi / 2) * (d - h) / L),   d = |X - X_m|

which is 1 at the FG edge, 0 at the CG edge and has zero slope at both.
"""

import enum
from dataclasses import dataclass

import numba as nb
import numpy as np


class Region(enum.IntEnum):
    FG = 0
    HYBRID = 1
    CG = 2


@dataclass(frozen=True)
class SwitchingGeometry:
    center: float  # X_m, nm
    half_width: float  # h, nm
    hybrid_width: float  # L, nm

    def __post_init__(self):
        if not self.half_width >= 0.0:
            raise ValueError(f"fg_half_width must be >= 0, got {self.half_width}")
        if not self.hybrid_width > 0.0:
            raise ValueError(f"hybrid_width must be > 0, got {self.hybrid_width}")

    @property
    def outer_radius(self):
        return self.half_width + self.hybrid_width

    def fits(self, box):
        return 2.0 * self.outer_radius <= box.lx


@nb.njit(cache=True, inline="always")
def _dist_x(x, center, lx):
    d = x - center
    d -= lx * np.floor(d / lx + 0.5)
    return d


@nb.njit(cache=True, inline="always")
def _lambda_scalar(x, center, h, L, lx):
    d = abs(_dist_x(x, center, lx))
    if d <= h:
        return 1.0
    if d >= h + L:
        return 0.0
    c = np.cos(0.5 * np.pi * (d - h) / L)
    return c * c


@nb.njit(cache=True, inline="always")
def _dlambda_scalar(x, center, h, L, lx):
    dx = _dist_x(x, center, lx)
    d = abs(dx)
    if d <= h or d >= h + L:
        return 0.0
    u = 0.5 * np.pi * (d - h) / L
    # d/dX of cos^2(u) = -(pi/L) cos u sin u * sign(X - X_m)
    s = 1.0 if dx > 0.0 else -1.0
    return -(np.pi / L) * np.cos(u) * np.sin(u) * s


@nb.njit(cache=True)
def lambda_arrays(x, center, h, L, lx):
    """lambda and dlambda/dX for an array of x coordinates."""
    n = x.shape[0]
    lam = np.empty(n)
    dlam = np.empty(n)
    for i in range(n):
        lam[i] = _lambda_scalar(x[i], center, h, L, lx)
        dlam[i] = _dlambda_scalar(x[i], center, h, L, lx)
    return lam, dlam


def _apply(fn, X, geom, box):
    X = np.asarray(X, dtype=np.float64)
    flat = np.ascontiguousarray(X.reshape(-1))
    lam, dlam = lambda_arrays(flat, geom.center, geom.half_width, geom.hybrid_width, box.lx)
    out = lam if fn == "lam" else dlam
    return float(out[0]) if X.ndim == 0 else out.reshape(X.shape)


def switching_lambda(X, geom, box):
    """Resolution weight: 1 in the FG region, 0 in the CG region."""
    return _apply("lam", X, geom, box)


def dlambda_dX(X, geom, box):
    """Analytic derivative of :func:`switching_lambda` with respect to X (1/nm)."""
    return _apply("dlam", X, geom, box)


@nb.njit(cache=True)
def region_array(x, center, h, L, lx):
    n = x.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        d = abs(_dist_x(x[i], center, lx))
        out[i] = 0 if d <= h else (2 if d >= h + L else 1)
    return out


def classify_region(X, geom, box):
    """FG / HYBRID / CG; boundary points belong to the closed FG and CG sides."""
    X = np.asarray(X, dtype=np.float64)
    flat = np.ascontiguousarray(X.reshape(-1))
    reg = region_array(flat, geom.center, geom.half_width, geom.hybrid_width, box.lx)
    return Region(int(reg[0])) if X.ndim == 0 else reg.reshape(X.shape)
