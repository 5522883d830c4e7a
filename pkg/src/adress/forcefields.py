"""Raw potential-energy ingredients: FG/CG Lennard-Jones and FG/CG bonded terms.

Every kernel evaluates one ingredient on its own. The region weighting and
the COM force distribution happen in :mod:`adress.multiscale`.

The compiled pair kernel works on a *local* set of points (all sites a
worker can see) and computes forces only for the ``query`` points it owns,
using a full neighbor list. Each owned point's force is therefore summed
over its own neighbors in ascending global order, which makes the result
independent of how the box is split between workers.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np


class ForceFieldError(RuntimeError):
    pass


@dataclass(frozen=True)
class LjParams:
    sigma: float  # nm
    epsilon: float  # kJ/mol
    cutoff: float  # nm

    def __post_init__(self):
        if not (self.sigma > 0 and self.epsilon > 0 and self.cutoff > 0):
            raise ValueError(f"LJ parameters must be positive: {self}")
        if self.cutoff <= self.sigma:
            raise ValueError(f"LJ cutoff {self.cutoff} must exceed sigma {self.sigma}")


@dataclass
class EnergyForces:
    energy: float
    forces: np.ndarray


def _lj_raw(r, sigma, epsilon):
    sr6 = (sigma / r) ** 6
    return 4.0 * epsilon * (sr6 * sr6 - sr6), 24.0 * epsilon * (2.0 * sr6 * sr6 - sr6) / r


def lj_shift(p):
    """Energy offset that makes the truncated potential vanish at the cutoff."""
    return _lj_raw(p.cutoff, p.sigma, p.epsilon)[0]


def lj_pair(r, p):
    """Cut-and-shifted 12-6 LJ; returns (energy, scalar force -dE/dr)."""
    if not r > 0.0:
        raise ForceFieldError(f"non-positive pair distance {r}: overlapping sites")
    if r >= p.cutoff:
        return 0.0, 0.0
    e, f = _lj_raw(r, p.sigma, p.epsilon)
    return e - lj_shift(p), f


# ----------------------------------------------------------------------------
# neighbor search


@nb.njit(cache=True, nogil=True)
def build_neighbor_list(pos, query, lmol, site_k, lmol_type, intra_off, intra_ok, type_nsites, lengths, rlist):
    """Full neighbor list (sorted local indices) for each point in ``query``.

    Pairs inside one molecule are listed only when ``intra_ok`` allows them.
    Points must already be wrapped into the box. Local indices are assumed
    to be ordered like global ids, so sorting by local index gives a
    decomposition-independent order.

    Cells are at least rlist/2 wide and searched two cells out; the periodic
    image shift is fixed per neighbor cell. An axis too short for that
    stencil is searched whole with a per-pair minimum image.
    """
    n = pos.shape[0]
    nq = query.shape[0]
    nc = np.empty(3, dtype=np.int64)
    reach = np.empty(3, dtype=np.int64)
    whole = np.zeros(3, dtype=np.bool_)
    for k in range(3):
        nc[k] = max(1, int(lengths[k] / (0.5 * rlist)))
        reach[k] = 2
        if 2 * reach[k] + 1 > nc[k]:
            whole[k] = True
            nc[k] = max(1, min(nc[k], int(lengths[k] / rlist)))
    ncell = nc[0] * nc[1] * nc[2]
    cell_of = np.empty(n, dtype=np.int64)
    counts = np.zeros(ncell + 1, dtype=np.int64)
    cx = np.empty(n, dtype=np.int64)
    cy = np.empty(n, dtype=np.int64)
    cz = np.empty(n, dtype=np.int64)
    for i in range(n):
        a = min(max(int(pos[i, 0] / lengths[0] * nc[0]), 0), nc[0] - 1)
        b = min(max(int(pos[i, 1] / lengths[1] * nc[1]), 0), nc[1] - 1)
        c = min(max(int(pos[i, 2] / lengths[2] * nc[2]), 0), nc[2] - 1)
        cx[i] = a
        cy[i] = b
        cz[i] = c
        cid = (a * nc[1] + b) * nc[2] + c
        cell_of[i] = cid
        counts[cid + 1] += 1
    for c in range(ncell):
        counts[c + 1] += counts[c]
    members = np.empty(n, dtype=np.int64)
    cpos = np.empty((n, 3))
    fill = counts[:-1].copy()
    for i in range(n):
        p = fill[cell_of[i]]
        members[p] = i
        cpos[p, 0] = pos[i, 0]
        cpos[p, 1] = pos[i, 1]
        cpos[p, 2] = pos[i, 2]
        fill[cell_of[i]] += 1

    lo = np.empty(3, dtype=np.int64)
    hi = np.empty(3, dtype=np.int64)
    rl2 = rlist * rlist
    ptr = np.zeros(nq + 1, dtype=np.int64)
    cap = max(16, nq * 64)
    nbr = np.empty(cap, dtype=np.int64)
    m = 0
    for qi in range(nq):
        i = query[qi]
        ci0 = cx[i]
        ci1 = cy[i]
        ci2 = cz[i]
        for k, ck in ((0, ci0), (1, ci1), (2, ci2)):
            if whole[k]:
                lo[k] = 0
                hi[k] = nc[k] - 1
            else:
                lo[k] = ck - reach[k]
                hi[k] = ck + reach[k]
        xi = pos[i, 0]
        yi = pos[i, 1]
        zi = pos[i, 2]
        Ii = lmol[i]
        start = m
        for ax in range(lo[0], hi[0] + 1):
            wx = ax % nc[0]
            sx = 0.0 if whole[0] else lengths[0] * np.floor(ax / nc[0])
            for ay in range(lo[1], hi[1] + 1):
                wy = ay % nc[1]
                sy = 0.0 if whole[1] else lengths[1] * np.floor(ay / nc[1])
                for az in range(lo[2], hi[2] + 1):
                    wz = az % nc[2]
                    sz = 0.0 if whole[2] else lengths[2] * np.floor(az / nc[2])
                    c2 = (wx * nc[1] + wy) * nc[2] + wz
                    for p in range(counts[c2], counts[c2 + 1]):
                        dx = xi - (cpos[p, 0] + sx)
                        dy = yi - (cpos[p, 1] + sy)
                        dz = zi - (cpos[p, 2] + sz)
                        if whole[0]:
                            dx -= lengths[0] * np.floor(dx / lengths[0] + 0.5)
                        if whole[1]:
                            dy -= lengths[1] * np.floor(dy / lengths[1] + 0.5)
                        if whole[2]:
                            dz -= lengths[2] * np.floor(dz / lengths[2] + 0.5)
                        if dx * dx + dy * dy + dz * dz >= rl2:
                            continue
                        j = members[p]
                        if j == i:
                            continue
                        if lmol[j] == Ii:
                            t = lmol_type[Ii]
                            ns = type_nsites[t]
                            if not intra_ok[intra_off[t] + site_k[i] * ns + site_k[j]]:
                                continue
                        if m == cap:
                            cap *= 2
                            grown = np.empty(cap, dtype=np.int64)
                            grown[:m] = nbr[:m]
                            nbr = grown
                        nbr[m] = j
                        m += 1
        nbr[start:m] = np.sort(nbr[start:m])
        ptr[qi + 1] = m
    return ptr, nbr[:m].copy()


@nb.njit(cache=True, nogil=True)
def max_displacement(pos, ref, lengths):
    dmax = 0.0
    for i in range(pos.shape[0]):
        r2 = 0.0
        for k in range(3):
            d = pos[i, k] - ref[i, k]
            d -= lengths[k] * np.floor(d / lengths[k] + 0.5)
            r2 += d * d
        if r2 > dmax:
            dmax = r2
    return np.sqrt(dmax)


# ----------------------------------------------------------------------------
# pair kernel


@nb.njit(cache=True, nogil=True)
def pair_kernel(pos, types, lmol, query, ptr, nbr, table, coef, skip_zero, lengths):
    """Weighted LJ forces on ``query`` points.

    Each pair energy e_ij is weighted by w_ij = (coef[I] + coef[J]) / 2 where
    I, J are the molecules of i and j. Returns

    * forces: w-weighted force on every query point (other rows zero)
    * e_weighted: sum of w_ij e_ij, counting half of each visit
    * e_raw: unweighted sum, same counting
    * share: per-molecule half-sum of the raw pair energies it takes part in
    * rmin: smallest pair distance seen (overlap diagnostics)

    With ``skip_zero`` pairs whose two coefficients are both zero are not
    evaluated; their energy then is missing from ``e_raw`` and ``share``.
    """
    n = pos.shape[0]
    forces = np.zeros((n, 3))
    share = np.zeros(coef.shape[0])
    e_w = 0.0
    e_raw = 0.0
    rmin2 = np.inf
    for qi in range(query.shape[0]):
        i = query[qi]
        I = lmol[i]
        ti = types[i]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        for p in range(ptr[qi], ptr[qi + 1]):
            j = nbr[p]
            J = lmol[j]
            if skip_zero and coef[I] == 0.0 and coef[J] == 0.0:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            dx -= lengths[0] * np.floor(dx / lengths[0] + 0.5)
            dy -= lengths[1] * np.floor(dy / lengths[1] + 0.5)
            dz -= lengths[2] * np.floor(dz / lengths[2] + 0.5)
            r2 = dx * dx + dy * dy + dz * dz
            if r2 < rmin2:
                rmin2 = r2
            tj = types[j]
            if r2 >= table[ti, tj, 2]:
                continue
            sig = table[ti, tj, 0]
            eps = table[ti, tj, 1]
            s2 = sig * sig / r2
            s6 = s2 * s2 * s2
            e = 4.0 * eps * (s6 * s6 - s6) - table[ti, tj, 3]
            fr = 24.0 * eps * (2.0 * s6 * s6 - s6) / r2
            w = 0.5 * (coef[I] + coef[J])
            fx += w * fr * dx
            fy += w * fr * dy
            fz += w * fr * dz
            e_w += 0.5 * w * e
            e_raw += 0.5 * e
            share[I] += 0.5 * e
        forces[i, 0] = fx
        forces[i, 1] = fy
        forces[i, 2] = fz
    return forces, e_w, e_raw, share, np.sqrt(rmin2)


# ----------------------------------------------------------------------------
# bonded kernels

BONDED_OK = 0
BONDED_BAD_ANGLE = 1
BONDED_BAD_DIHEDRAL = 2


@nb.njit(cache=True, inline="always")
def _mi(a, b, lengths, out):
    for k in range(3):
        d = a[k] - b[k]
        out[k] = d - lengths[k] * np.floor(d / lengths[k] + 0.5)


@nb.njit(cache=True, nogil=True)
def bonded_kernel(pos, owned_gmol, owned_loff, mol_start, bond_ptr, bond_idx, bond_par,
                  angle_ptr, angle_idx, angle_par, dih_ptr, dih_idx, dih_par, lengths):
    """Harmonic bonds, harmonic angles and cosine dihedrals of owned molecules.

    Site index arrays are global; ``owned_loff[m]`` is the local row of the
    first site of owned molecule ``owned_gmol[m]``. Returns
    (forces, energy, status, bad_term).
    """
    n = pos.shape[0]
    f = np.zeros((n, 3))
    energy = 0.0
    rij = np.empty(3)
    rkj = np.empty(3)
    rkl = np.empty(3)
    for mm in range(owned_gmol.shape[0]):
        g = owned_gmol[mm]
        shift = owned_loff[mm] - mol_start[g]
        for b in range(bond_ptr[g], bond_ptr[g + 1]):
            i = bond_idx[b, 0] + shift
            j = bond_idx[b, 1] + shift
            kb = bond_par[b, 0]
            r0 = bond_par[b, 1]
            _mi(pos[i], pos[j], lengths, rij)
            r = np.sqrt(rij[0] ** 2 + rij[1] ** 2 + rij[2] ** 2)
            dr = r - r0
            energy += 0.5 * kb * dr * dr
            if r > 0.0:
                s = -kb * dr / r
                for k in range(3):
                    f[i, k] += s * rij[k]
                    f[j, k] -= s * rij[k]
        for a in range(angle_ptr[g], angle_ptr[g + 1]):
            i = angle_idx[a, 0] + shift
            j = angle_idx[a, 1] + shift
            kk = angle_idx[a, 2] + shift
            kt = angle_par[a, 0]
            t0 = angle_par[a, 1]
            _mi(pos[i], pos[j], lengths, rij)
            _mi(pos[kk], pos[j], lengths, rkj)
            n1 = np.sqrt(rij[0] ** 2 + rij[1] ** 2 + rij[2] ** 2)
            n2 = np.sqrt(rkj[0] ** 2 + rkj[1] ** 2 + rkj[2] ** 2)
            if n1 == 0.0 or n2 == 0.0:
                return f, energy, BONDED_BAD_ANGLE, a
            c = (rij[0] * rkj[0] + rij[1] * rkj[1] + rij[2] * rkj[2]) / (n1 * n2)
            c = min(1.0, max(-1.0, c))
            theta = np.arccos(c)
            dt = theta - t0
            energy += 0.5 * kt * dt * dt
            s = np.sqrt(1.0 - c * c)
            if s < 1e-12:
                if kt * dt != 0.0:
                    return f, energy, BONDED_BAD_ANGLE, a
                continue
            pre = kt * dt / s
            for k in range(3):
                fi = pre * (rkj[k] / (n1 * n2) - c * rij[k] / (n1 * n1))
                fk = pre * (rij[k] / (n1 * n2) - c * rkj[k] / (n2 * n2))
                f[i, k] += fi
                f[kk, k] += fk
                f[j, k] -= fi + fk
        for d in range(dih_ptr[g], dih_ptr[g + 1]):
            i = dih_idx[d, 0] + shift
            j = dih_idx[d, 1] + shift
            kk = dih_idx[d, 2] + shift
            l = dih_idx[d, 3] + shift
            mult = dih_par[d, 0]
            kd = dih_par[d, 1]
            ph = dih_par[d, 2]
            _mi(pos[i], pos[j], lengths, rij)
            _mi(pos[kk], pos[j], lengths, rkj)
            _mi(pos[kk], pos[l], lengths, rkl)
            m0 = rij[1] * rkj[2] - rij[2] * rkj[1]
            m1 = rij[2] * rkj[0] - rij[0] * rkj[2]
            m2 = rij[0] * rkj[1] - rij[1] * rkj[0]
            q0 = rkj[1] * rkl[2] - rkj[2] * rkl[1]
            q1 = rkj[2] * rkl[0] - rkj[0] * rkl[2]
            q2 = rkj[0] * rkl[1] - rkj[1] * rkl[0]
            mm2 = m0 * m0 + m1 * m1 + m2 * m2
            qq2 = q0 * q0 + q1 * q1 + q2 * q2
            rkj2 = rkj[0] ** 2 + rkj[1] ** 2 + rkj[2] ** 2
            if mm2 < 1e-24 or qq2 < 1e-24 or rkj2 == 0.0:
                return f, energy, BONDED_BAD_DIHEDRAL, d
            nrkj = np.sqrt(rkj2)
            # |m x q| = |rkj| |rij . q| for these cross products
            y = nrkj * (rij[0] * q0 + rij[1] * q1 + rij[2] * q2)
            x = m0 * q0 + m1 * q1 + m2 * q2
            phi = np.arctan2(y, x)
            arg = mult * phi - ph
            energy += kd * (1.0 + np.cos(arg))
            ddphi = -kd * mult * np.sin(arg)
            fi0 = -ddphi * nrkj / mm2 * m0
            fi1 = -ddphi * nrkj / mm2 * m1
            fi2 = -ddphi * nrkj / mm2 * m2
            fl0 = ddphi * nrkj / qq2 * q0
            fl1 = ddphi * nrkj / qq2 * q1
            fl2 = ddphi * nrkj / qq2 * q2
            p = (rij[0] * rkj[0] + rij[1] * rkj[1] + rij[2] * rkj[2]) / rkj2
            q = (rkl[0] * rkj[0] + rkl[1] * rkj[1] + rkl[2] * rkj[2]) / rkj2
            s0 = p * fi0 - q * fl0
            s1 = p * fi1 - q * fl1
            s2 = p * fi2 - q * fl2
            f[i, 0] += fi0
            f[i, 1] += fi1
            f[i, 2] += fi2
            f[j, 0] -= fi0 - s0
            f[j, 1] -= fi1 - s1
            f[j, 2] -= fi2 - s2
            f[kk, 0] -= fl0 + s0
            f[kk, 1] -= fl1 + s1
            f[kk, 2] -= fl2 + s2
            f[l, 0] += fl0
            f[l, 1] += fl1
            f[l, 2] += fl2
    return f, energy, BONDED_OK, -1


@nb.njit(cache=True, nogil=True)
def cg_bond_kernel(bead_pos, g2l, owned_local, bond_idx, bond_par, lengths):
    """Harmonic bonds between CG beads; forces only on owned beads.

    Each bond's energy is split evenly between its two ends so that summing
    over all workers counts it once.
    """
    nb_ = bead_pos.shape[0]
    f = np.zeros((nb_, 3))
    energy = 0.0
    d = np.empty(3)
    for b in range(bond_idx.shape[0]):
        li = g2l[bond_idx[b, 0]]
        lj = g2l[bond_idx[b, 1]]
        oi = li >= 0 and owned_local[li]
        oj = lj >= 0 and owned_local[lj]
        if not (oi or oj):
            continue
        _mi(bead_pos[li], bead_pos[lj], lengths, d)
        r = np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
        dr = r - bond_par[b, 1]
        e = 0.5 * bond_par[b, 0] * dr * dr
        s = -bond_par[b, 0] * dr / r if r > 0.0 else 0.0
        if oi:
            energy += 0.5 * e
            for k in range(3):
                f[li, k] += s * d[k]
        if oj:
            energy += 0.5 * e
            for k in range(3):
                f[lj, k] -= s * d[k]
    return f, energy


# ----------------------------------------------------------------------------
# whole-system convenience wrappers


def _all_sites_nlist(topology, positions, box, rlist):
    pos = box.wrap(positions)
    n = topology.n_sites
    site_k = np.arange(n) - topology.mol_start[topology.site_mol]
    ptr, nbr = build_neighbor_list(
        pos, np.arange(n), topology.site_mol, site_k, topology.mol_type,
        topology.intra_offset, topology.intra_ok, topology.moltype_nsites, box.lengths, rlist,
    )
    return pos, ptr, nbr


def _bead_nlist(bead_pos, box, rlist):
    n = bead_pos.shape[0]
    idx = np.arange(n)
    no_intra = np.zeros(1, dtype=np.bool_)
    return build_neighbor_list(
        bead_pos, idx, idx, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64),
        np.zeros(1, dtype=np.int64), no_intra, np.ones(1, dtype=np.int64), box.lengths, rlist,
    )


def fg_nonbonded(positions, topology, box, skin=0.1):
    """Unweighted FG Lennard-Jones energy and per-site forces."""
    pos, ptr, nbr = _all_sites_nlist(topology, positions, box, topology.fg_cutoff + skin)
    coef = np.ones(topology.n_molecules)
    f, _, e, _, _ = pair_kernel(pos, topology.site_type, topology.site_mol, np.arange(topology.n_sites),
                                ptr, nbr, topology.fg_table, coef, False, box.lengths)
    return EnergyForces(e, f)


def raise_bonded_error(status, term, topology):
    if status == BONDED_BAD_ANGLE:
        i, j, k = topology.angle_idx[term]
        raise ForceFieldError(f"degenerate angle between sites {i}-{j}-{k} (zero-length arm or collinear)")
    if status == BONDED_BAD_DIHEDRAL:
        i, j, k, l = topology.dih_idx[term]
        raise ForceFieldError(f"degenerate dihedral {i}-{j}-{k}-{l} (collinear sites)")


def fg_bonded(positions, topology, box):
    """Bonded FG energy/forces; acts on every molecule regardless of region."""
    pos = np.ascontiguousarray(positions, dtype=np.float64)
    f, e, status, term = bonded_kernel(
        pos, np.arange(topology.n_molecules), topology.mol_start, topology.mol_start,
        topology.bond_ptr, topology.bond_idx, topology.bond_par,
        topology.angle_ptr, topology.angle_idx, topology.angle_par,
        topology.dih_ptr, topology.dih_idx, topology.dih_par, box.lengths,
    )
    raise_bonded_error(status, term, topology)
    return EnergyForces(e, f)


def cg_nonbonded(cg_view, topology, box, skin=0.1):
    """Unweighted CG bead-bead LJ energy and per-bead forces."""
    bead_pos = box.wrap(cg_view.positions)
    ptr, nbr = _bead_nlist(bead_pos, box, topology.cg_cutoff + skin)
    n = bead_pos.shape[0]
    f, _, e, _, _ = pair_kernel(bead_pos, topology.mol_bead_type, np.arange(n), np.arange(n), ptr, nbr,
                                topology.cg_table, np.ones(n), False, box.lengths)
    return EnergyForces(e, f)


def cg_bonded(cg_view, topology, box):
    n = cg_view.positions.shape[0]
    if len(topology.cg_bond_idx) == 0:
        return EnergyForces(0.0, np.zeros((n, 3)))
    f, e = cg_bond_kernel(np.ascontiguousarray(cg_view.positions), np.arange(n), np.ones(n, dtype=np.bool_),
                          topology.cg_bond_idx, topology.cg_bond_par, box.lengths)
    return EnergyForces(e, f)
