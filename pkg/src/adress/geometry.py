"""Periodic box, minimum-image displacements and thermal bookkeeping.

Units follow GROMACS conventions throughout the package: nm, ps, u (g/mol),
kJ/mol and K.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np

#: Boltzmann constant in kJ mol^-1 K^-1.
KB = 0.00831446


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicBox:
    """Orthorhombic periodic box with edge lengths in nm."""

    lx: float
    ly: float
    lz: float

    def __post_init__(self):
        for name, value in (("lx", self.lx), ("ly", self.ly), ("lz", self.lz)):
            if not np.isfinite(value) or value <= 0.0:
                raise GeometryError(f"box length {name} must be positive, got {value}")

    @classmethod
    def cubic(cls, length):
        return cls(length, length, length)

    @property
    def lengths(self):
        return np.array([self.lx, self.ly, self.lz], dtype=np.float64)

    @property
    def volume(self):
        return self.lx * self.ly * self.lz

    def wrap(self, positions):
        """Map positions into [0, L) along every axis."""
        return wrap_positions(np.asarray(positions, dtype=np.float64), self.lengths)


@nb.njit(cache=True, inline="always")
def _min_image_1d(d, length):
    # result in [-L/2, L/2); the half-box tie goes to -L/2
    return d - length * np.floor(d / length + 0.5)


@nb.njit(cache=True)
def _min_image_rows(d, lengths):
    out = np.empty_like(d)
    for i in range(d.shape[0]):
        for k in range(3):
            out[i, k] = _min_image_1d(d[i, k], lengths[k])
    return out


@nb.njit(cache=True)
def wrap_positions(x, lengths):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        for k in range(3):
            v = x[i, k] - lengths[k] * np.floor(x[i, k] / lengths[k])
            # floor can round x = -tiny up to exactly L
            if v >= lengths[k]:
                v -= lengths[k]
            out[i, k] = v
    return out


def minimum_image(d, box):
    """Shortest periodic image of displacement(s) ``d``.

    Accepts a single 3-vector or an ``(n, 3)`` array. Every component of
    the result lies in ``[-L/2, L/2)``; a displacement of exactly half a box
    length maps to ``-L/2``.
    """
    arr = np.asarray(d, dtype=np.float64)
    flat = np.atleast_2d(arr)
    out = _min_image_rows(np.ascontiguousarray(flat), box.lengths)
    return out.reshape(arr.shape)


def kinetic_energy(velocities, masses):
    v = np.asarray(velocities, dtype=np.float64)
    m = np.asarray(masses, dtype=np.float64)
    return 0.5 * float(np.sum(m[:, None] * v * v))


def degrees_of_freedom(n_sites, n_constraints=0):
    return 3 * n_sites - n_constraints


def instantaneous_temperature(velocities, masses, n_constraints=0):
    """T = 2 E_kin / (N_df k_B) with N_df = 3 N - n_constraints."""
    v = np.asarray(velocities, dtype=np.float64)
    ndf = degrees_of_freedom(v.shape[0], n_constraints)
    if ndf <= 0:
        raise GeometryError(f"no degrees of freedom (3*{v.shape[0]} - {n_constraints})")
    return 2.0 * kinetic_energy(v, masses) / (ndf * KB)
