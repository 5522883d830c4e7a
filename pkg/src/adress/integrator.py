"""Stochastic dynamics: Langevin-impulse leapfrog with counter-based noise.

One step, with forces F evaluated at x(t)::

    v <- v + F dt / (2 m)                    # v(t - dt/2) -> v(t)
    v <- a v + sqrt((1 - a^2) kT / m) xi     # a = exp(-gamma dt)
    v <- v + F dt / (2 m)                    # -> v(t + dt/2)
    x <- x + v dt

With gamma = 0 (or the thermostat off) the OU substep is skipped and the
update is plain leapfrog, i.e. velocity Verlet in positions.

The Gaussian deviates come from Philox4x64-10 keyed by the seed with the
(step, site id) pair as the counter, so a site sees the same noise no
matter which worker integrates it.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np

from .geometry import KB, kinetic_energy

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorParams:
    dt: float  # ps
    friction: float = 0.5  # 1/ps
    ref_temperature: float = 323.0  # K
    seed: int = 0
    thermostat: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.friction >= 0:
            raise ValueError(f"friction must be >= 0, got {self.friction}")
        if not self.ref_temperature >= 0:
            raise ValueError(f"ref_temperature must be >= 0, got {self.ref_temperature}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def stochastic(self):
        return self.thermostat and self.friction > 0.0


@nb.njit(cache=True, inline="always")
def _mulhilo(a, b):
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _LO32) + (p2 & _LO32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, a * b


@nb.njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds on a 4-word counter and 2-word key."""
    for r in range(10):
        if r > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, inline="always")
def _unit(x):
    # 53-bit uniform in (0, 1]
    return (np.float64(x >> _S11) + 1.0) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def _site_normals(seed, site, step, out):
    r0, r1, r2, r3 = philox4x64(np.uint64(step), np.uint64(site), np.uint64(0), np.uint64(0),
                                np.uint64(seed), np.uint64(0))
    a = np.sqrt(-2.0 * np.log(_unit(r0)))
    b = np.sqrt(-2.0 * np.log(_unit(r2)))
    t0 = 2.0 * np.pi * _unit(r1)
    t1 = 2.0 * np.pi * _unit(r3)
    out[0] = a * np.cos(t0)
    out[1] = a * np.sin(t0)
    out[2] = b * np.cos(t1)


@nb.njit(cache=True)
def normals_for_sites(seed, site_ids, step):
    """(n, 3) standard normal deviates for the given global site ids."""
    out = np.empty((site_ids.shape[0], 3))
    buf = np.empty(3)
    for i in range(site_ids.shape[0]):
        _site_normals(seed, site_ids[i], step, buf)
        out[i, 0] = buf[0]
        out[i, 1] = buf[1]
        out[i, 2] = buf[2]
    return out


def rng_stream(seed, site_id, step_index, component):
    """Stateless standard normal deviate for one (seed, site, step, component)."""
    if component not in (0, 1, 2):
        raise ValueError("component must be 0, 1 or 2")
    buf = np.empty(3)
    _site_normals(np.uint64(seed), np.uint64(site_id), np.uint64(step_index), buf)
    return float(buf[component])


@nb.njit(cache=True, nogil=True)
def sd_kernel(pos, vel, force, mass, site_ids, step, dt, decay, kT, seed, stochastic, lengths):
    """In-place SD update of owned sites.

    Returns (kinetic energy at the on-step velocity, index of the first site
    with a non-finite force or -1).
    """
    ke = 0.0
    buf = np.empty(3)
    for i in range(pos.shape[0]):
        for k in range(3):
            if not np.isfinite(force[i, k]):
                return ke, i
        half = 0.5 * dt / mass[i]
        for k in range(3):
            vel[i, k] += half * force[i, k]
        ke += 0.5 * mass[i] * (vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2)
        if stochastic:
            _site_normals(seed, site_ids[i], step, buf)
            sd = np.sqrt((1.0 - decay * decay) * kT / mass[i])
            for k in range(3):
                vel[i, k] = decay * vel[i, k] + sd * buf[k]
        for k in range(3):
            vel[i, k] += half * force[i, k]
            x = pos[i, k] + vel[i, k] * dt
            x -= lengths[k] * np.floor(x / lengths[k])
            if x >= lengths[k]:
                x -= lengths[k]
            pos[i, k] = x
    return ke, -1


def integrate_sites(pos, vel, force, mass, site_ids, step, params, lengths):
    """Advance arrays in place; returns the on-step kinetic energy."""
    decay = float(np.exp(-params.friction * params.dt))
    kT = KB * params.ref_temperature
    ke, bad = sd_kernel(pos, vel, force, mass, site_ids, np.uint64(step), params.dt, decay, kT,
                        np.uint64(params.seed), params.stochastic, lengths)
    if bad >= 0:
        raise IntegrationError(
            f"non-finite force on site {int(site_ids[bad])} at step {step}: "
            f"position={pos[bad].tolist()} velocity={vel[bad].tolist()} force={force[bad].tolist()}"
        )
    return ke


def sd_step(state, forces, params, masses):
    """Return the state advanced by one SD step (input left untouched)."""
    new = state.copy()
    ke = integrate_sites(new.positions, new.velocities, np.ascontiguousarray(forces, dtype=np.float64),
                         np.asarray(masses, dtype=np.float64), np.arange(state.n_sites, dtype=np.uint64),
                         state.step, params, state.box.lengths)
    new.step = state.step + 1
    new.time = state.time + params.dt
    new.forces = None
    new.kinetic_energy = ke
    return new


def maxwell_boltzmann(masses, temperature, rng):
    """Velocities at ``temperature`` with zero total momentum."""
    m = np.asarray(masses, dtype=np.float64)
    v = rng.normal(size=(m.shape[0], 3)) * np.sqrt(KB * temperature / m)[:, None]
    v -= (m[:, None] * v).sum(axis=0) / m.sum()
    if temperature > 0 and m.shape[0] > 1:
        t = 2.0 * kinetic_energy(v, m) / (3 * m.shape[0] * KB)
        v *= np.sqrt(temperature / t)
    return v
