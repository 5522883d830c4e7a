"""Multiscale potential and its exact negative gradient.

The potential is

    V = sum_ij w_ij V_FG,ij + sum_IJ (1 - w_IJ) V_CG,IJ + V_b,FG + V_b,CG + sum_I V_t(lambda_I)

with the pair weight w_ij = (lambda_I + lambda_J) / 2 taken from the
molecules the two sites belong to. Bonded FG terms act everywhere,
unscaled. Differentiating through lambda(X_I) and the COM map
dX_I/dx_ik = m_ik / M_I gives, for site k of molecule I,

    F_ik = sum_j w_ij F_ij + F_b,ik - (m_ik/M_I) lambda'_I U_FG,I x
           + (m_ik/M_I) [sum_J (1 - w_IJ) F_IJ + lambda'_I U_CG,I x + F_b,I]
           + F_t,ik

where U_FG,I and U_CG,I are half the summed pair energies molecule I takes
part in. The "drift" terms in lambda' only act along x and only on
molecules inside the hybrid zone.
"""

from dataclasses import dataclass, fields
from pathlib import Path

import numba as nb
import numpy as np
from scipy.interpolate import CubicSpline

from .forcefields import (
    ForceFieldError,
    bonded_kernel,
    build_neighbor_list,
    cg_bond_kernel,
    max_displacement,
    pair_kernel,
    raise_bonded_error,
)
from .switching import Region, lambda_arrays, region_array
from .topology import molecule_coms


class TransitionTableError(ValueError):
    pass


@nb.njit(cache=True)
def pair_weight(lambda_i, lambda_j):
    """Resolution weight of an FG pair; the CG pair carries 1 - w."""
    return 0.5 * (lambda_i + lambda_j)


class TransitionPotential:
    """Hybrid-zone correction V_t as a function of lambda.

    ``mode`` is "zero" (default) or "tabulated". A table is interpolated
    with a cubic spline and must span lambda in [0, 1]. V_t only acts on
    molecules strictly inside the hybrid zone; for energy continuity a
    table should vanish at both ends.
    """

    def __init__(self, mode="zero", lambdas=None, energies=None):
        if mode not in ("zero", "tabulated"):
            raise TransitionTableError(f"unknown transition potential mode {mode!r}")
        self.mode = mode
        self._spline = None
        if mode == "tabulated":
            lam = np.asarray(lambdas, dtype=np.float64)
            e = np.asarray(energies, dtype=np.float64)
            if lam.ndim != 1 or lam.shape != e.shape or lam.size < 2:
                raise TransitionTableError("table needs matching lambda/energy columns with >= 2 rows")
            if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(e))):
                raise TransitionTableError("table values must be finite")
            order = np.argsort(lam)
            lam, e = lam[order], e[order]
            if np.any(np.diff(lam) <= 0):
                raise TransitionTableError("table lambda values must be distinct")
            if lam[0] > 0.0 or lam[-1] < 1.0:
                raise TransitionTableError(f"table covers lambda [{lam[0]}, {lam[-1]}], must cover [0, 1]")
            self.lambdas, self.energies = lam, e
            self._spline = CubicSpline(lam, e)
            self._dspline = self._spline.derivative()

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def load(cls, path):
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise TransitionTableError(f"{path}: first line must be a '# mode: ...' header")
        head = lines[0].lstrip("#").strip()
        key, _, mode = head.partition(":")
        if key.strip() != "mode":
            raise TransitionTableError(f"{path}: malformed header {lines[0]!r}")
        mode = mode.strip()
        if mode == "zero":
            return cls.zero()
        rows = []
        for lineno, line in enumerate(lines[1:], 2):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TransitionTableError(f"{path}:{lineno}: expected 'lambda energy'")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise TransitionTableError(f"{path}:{lineno}: non-numeric entry") from None
        if not rows:
            raise TransitionTableError(f"{path}: empty table")
        lam, e = zip(*rows)
        return cls(mode, lam, e)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(f"# mode: {self.mode}\n")
            if self.mode == "tabulated":
                for lam, e in zip(self.lambdas, self.energies):
                    fh.write(f"{float(lam)!r} {float(e)!r}\n")

    def _check(self, lam):
        if np.any((lam < self.lambdas[0]) | (lam > self.lambdas[-1])):
            raise TransitionTableError(f"lambda outside table range [{self.lambdas[0]}, {self.lambdas[-1]}]")

    def energy(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        if self.mode == "zero":
            return np.zeros_like(lam)
        self._check(lam)
        return self._spline(lam)

    def derivative(self, lam):
        """dV_t / dlambda."""
        lam = np.asarray(lam, dtype=np.float64)
        if self.mode == "zero":
            return np.zeros_like(lam)
        self._check(lam)
        return self._dspline(lam)


def transition_force(mass_fraction, lam, dlam, vt):
    """Force on one site from V_t: -(dV_t/dlambda) lambda' (m_ik/M_i) along x."""
    f = np.zeros(3)
    if vt.mode == "zero" or dlam == 0.0:
        return f
    f[0] = -float(vt.derivative(lam)) * dlam * mass_fraction
    return f


@dataclass
class MultiscaleEnergy:
    fg_nonbonded: float = 0.0  # sum w_ij V_FG,ij
    cg_nonbonded: float = 0.0  # sum (1 - w_IJ) V_CG,IJ
    fg_bonded: float = 0.0
    cg_bonded: float = 0.0
    transition: float = 0.0

    @property
    def total(self):
        return self.fg_nonbonded + self.cg_nonbonded + self.fg_bonded + self.cg_bonded + self.transition

    def as_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["total"] = self.total
        return out


@dataclass
class ForceBreakdown:
    """Per-site force terms; ``total`` adds them in a fixed order."""

    fg_nonbonded: np.ndarray  # sum_j w_ij F_ij
    fg_bonded: np.ndarray
    fg_drift: np.ndarray  # -(m/M) lambda' U_FG x
    cg_nonbonded: np.ndarray  # (m/M) sum_J (1 - w_IJ) F_IJ
    cg_drift: np.ndarray  # +(m/M) lambda' U_CG x
    cg_bonded: np.ndarray  # (m/M) F_b,I
    transition: np.ndarray

    @property
    def total(self):
        t = self.fg_nonbonded + self.fg_bonded
        t = t + self.fg_drift
        t = t + self.cg_nonbonded
        t = t + self.cg_drift
        t = t + self.cg_bonded
        return t + self.transition

    def terms(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LocalResult:
    energy: MultiscaleEnergy
    forces: ForceBreakdown
    lam: np.ndarray  # per owned molecule
    regions: np.ndarray  # per owned molecule
    max_site_radius: float
    min_pair_distance: float


class _Layout:
    """Index bookkeeping for one set of visible molecules."""

    def __init__(self, topology, mols, owned):
        self.mols = mols
        self.owned = owned
        nsites = topology.mol_nsites[mols]
        self.loff = np.zeros(len(mols), dtype=np.int64)
        np.cumsum(nsites[:-1], out=self.loff[1:])
        n = int(nsites.sum())
        self.lmol = np.repeat(np.arange(len(mols)), nsites)
        self.gid = np.repeat(topology.mol_start[mols], nsites) + (np.arange(n) - np.repeat(self.loff, nsites))
        self.site_k = self.gid - topology.mol_start[mols][self.lmol]
        self.types = topology.site_type[self.gid]
        self.mass = topology.site_mass[self.gid]
        self.mol_n = nsites
        self.lmol_type = topology.mol_type[mols]
        self.bead_types = topology.mol_bead_type[mols]
        owned_sites = owned[self.lmol]
        self.query = np.flatnonzero(owned_sites)
        self.query_beads = np.flatnonzero(owned)
        self.owned_gmol = mols[owned]
        self.owned_loff = self.loff[owned]
        self.mass_fraction = topology.site_mass_fraction[self.gid[self.query]]
        self.query_lmol = self.lmol[self.query]
        self.g2l = np.full(topology.n_molecules, -1, dtype=np.int64)
        self.g2l[mols] = np.arange(len(mols))
        self.bead_ids = np.arange(len(mols))
        self.key = (mols.tobytes(), owned.tobytes())


class MultiscaleCalculator:
    """Evaluates the multiscale energy and forces for a set of molecules.

    ``compute(mols, owned, positions)`` takes the sorted global ids of every
    molecule a worker can see, a mask of the ones it owns, and their site
    positions in the same order (wrapped into the box). Forces are returned
    for owned sites only; energies count each interaction's share that
    belongs to the owned molecules, so per-worker values add up to the
    global total.

    Neighbor lists are kept between calls and rebuilt when the molecule set
    changes or any point moved more than half the skin.
    """

    def __init__(self, topology, box, geom, vt=None, skin=0.1):
        self.topology = topology
        self.box = box
        self.geom = geom
        self.vt = vt if vt is not None else TransitionPotential.zero()
        self.skin = skin
        self._layout = None
        self._nl = None
        self.n_rebuilds = 0
        t = topology
        self._no_intra = np.zeros(1, dtype=np.bool_)

    def _neighbor_lists(self, lay, pos, bead_pos):
        t = self.topology
        L = self.box.lengths
        if self._nl is not None and self._nl[0] == lay.key:
            _, ref_pos, ref_beads, lists = self._nl
            moved = max(max_displacement(pos, ref_pos, L), max_displacement(bead_pos, ref_beads, L))
            if moved <= 0.5 * self.skin:
                return lists
        fg_ptr, fg_nbr = build_neighbor_list(
            pos, lay.query, lay.lmol, lay.site_k, lay.lmol_type, t.intra_offset, t.intra_ok,
            t.moltype_nsites, L, t.fg_cutoff + self.skin,
        )
        nb_ = bead_pos.shape[0]
        cg_ptr, cg_nbr = build_neighbor_list(
            bead_pos, lay.query_beads, lay.bead_ids, np.zeros(nb_, dtype=np.int64), np.zeros(nb_, dtype=np.int64),
            np.zeros(1, dtype=np.int64), self._no_intra, np.ones(1, dtype=np.int64), L, t.cg_cutoff + self.skin,
        )
        lists = (fg_ptr, fg_nbr, cg_ptr, cg_nbr)
        self._nl = (lay.key, pos.copy(), bead_pos.copy(), lists)
        self.n_rebuilds += 1
        return lists

    def compute(self, mols, owned, positions):
        t = self.topology
        g = self.geom
        L = self.box.lengths
        mols = np.asarray(mols, dtype=np.int64)
        owned = np.asarray(owned, dtype=np.bool_)
        lay = self._layout
        if lay is None or lay.key != (mols.tobytes(), owned.tobytes()):
            lay = self._layout = _Layout(t, mols, owned)
        pos = np.ascontiguousarray(positions, dtype=np.float64)
        if pos.shape != (lay.gid.shape[0], 3):
            raise ValueError(f"expected {lay.gid.shape[0]} site positions, got {pos.shape}")

        com, rmax = molecule_coms(pos, lay.loff, lay.mol_n, lay.mass, L)
        lam, dlam = lambda_arrays(np.ascontiguousarray(com[:, 0]), g.center, g.half_width, g.hybrid_width, self.box.lx)
        fg_ptr, fg_nbr, cg_ptr, cg_nbr = self._neighbor_lists(lay, pos, com)

        f_fg, e_fg, _, u_fg, rmin = pair_kernel(pos, lay.types, lay.lmol, lay.query, fg_ptr, fg_nbr,
                                                t.fg_table, lam, True, L)
        f_cg_bead, e_cg, _, u_cg, _ = pair_kernel(com, lay.bead_types, lay.bead_ids, lay.query_beads,
                                                  cg_ptr, cg_nbr, t.cg_table, 1.0 - lam, True, L)
        f_b, e_b, status, term = bonded_kernel(
            pos, lay.owned_gmol, lay.owned_loff, t.mol_start, t.bond_ptr, t.bond_idx, t.bond_par,
            t.angle_ptr, t.angle_idx, t.angle_par, t.dih_ptr, t.dih_idx, t.dih_par, L,
        )
        raise_bonded_error(status, term, t)
        if len(t.cg_bond_idx):
            f_cgb_bead, e_cgb = cg_bond_kernel(com, lay.g2l, owned, t.cg_bond_idx, t.cg_bond_par, L)
        else:
            f_cgb_bead, e_cgb = np.zeros_like(com), 0.0

        own = lay.query_beads
        hybrid = (lam[own] > 0.0) & (lam[own] < 1.0)
        vt_e = np.zeros(own.shape[0])
        vt_d = np.zeros(own.shape[0])
        if self.vt.mode != "zero" and hybrid.any():
            vt_e[hybrid] = self.vt.energy(lam[own][hybrid])
            vt_d[hybrid] = self.vt.derivative(lam[own][hybrid])

        q = lay.query
        qm = lay.query_lmol
        mf = lay.mass_fraction[:, None]
        n_q = q.shape[0]
        xhat = np.zeros((n_q, 3))
        xhat[:, 0] = 1.0
        # per-owned-molecule V_t derivative, expanded to sites
        vt_site = np.zeros(len(mols))
        vt_site[own] = vt_d
        forces = ForceBreakdown(
            fg_nonbonded=f_fg[q],
            fg_bonded=f_b[q],
            fg_drift=-(mf * (dlam[qm] * u_fg[qm])[:, None]) * xhat,
            cg_nonbonded=mf * f_cg_bead[qm],
            cg_drift=(mf * (dlam[qm] * u_cg[qm])[:, None]) * xhat,
            cg_bonded=mf * f_cgb_bead[qm],
            transition=-(mf * (vt_site[qm] * dlam[qm])[:, None]) * xhat,
        )
        energy = MultiscaleEnergy(e_fg, e_cg, e_b, e_cgb, float(vt_e.sum()))
        regions = region_array(np.ascontiguousarray(com[own, 0]), g.center, g.half_width, g.hybrid_width, self.box.lx)
        return LocalResult(energy, forces, lam[own], regions, rmax, rmin)

    def compute_all(self, positions):
        n = self.topology.n_molecules
        return self.compute(np.arange(n), np.ones(n, dtype=np.bool_), self.box.wrap(positions))


def _calculator(state, topology, geom, vt, skin):
    return MultiscaleCalculator(topology, state.box, geom, vt, skin)


def multiscale_potential(state, topology, geom, vt=None, skin=0.1):
    """V^m and its components for a whole-system state."""
    return _calculator(state, topology, geom, vt, skin).compute_all(state.positions).energy


def multiscale_forces(state, topology, geom, vt=None, skin=0.1):
    """Per-site force breakdown, the exact negative gradient of V^m."""
    return _calculator(state, topology, geom, vt, skin).compute_all(state.positions).forces


def multiscale_evaluate(state, topology, geom, vt=None, skin=0.1):
    return _calculator(state, topology, geom, vt, skin).compute_all(state.positions)


def region_counts(regions):
    regions = np.asarray(regions)
    return {r.name: int(np.count_nonzero(regions == r)) for r in Region}


__all__ = [
    "ForceBreakdown",
    "ForceFieldError",
    "MultiscaleCalculator",
    "MultiscaleEnergy",
    "TransitionPotential",
    "multiscale_forces",
    "multiscale_potential",
    "pair_weight",
    "transition_force",
]
