"""Molecular structure: FG sites grouped into molecules, one CG bead each.

The topology file is a plain-text sectioned format. Lines starting with ``;``
or ``#`` are comments. Site indices are 1-based within a molecule type.

::

    [moleculetype]
    name   butane
    nrexcl 3

    [sites]
    ; name  type  mass
    C1      CH3   15.035
    ...
    [bonds]
    ; i j  k_b (kJ/mol/nm^2)  r0 (nm)
    [angles]
    ; i j k  k_theta (kJ/mol/rad^2)  theta0 (deg)
    [dihedrals]
    ; i j k l  multiplicity  K (kJ/mol)  phase (deg)   V = K (1 + cos(n phi - phase))

    [nonbonded_fg]
    ; type_a type_b  sigma (nm)  epsilon (kJ/mol)  cutoff (nm)
    [nonbonded_cg]
    ; bead_a bead_b  sigma  epsilon  cutoff
    [mapping]
    ; moleculetype  bead_type  sites...
    [cg_bonds]
    ; mol_i mol_j  k_b  r0          (optional, 1-based molecule numbers)
    [molecules]
    ; moleculetype  count

A second ``[moleculetype]`` starts a new block; ``[sites]`` ... ``[dihedrals]``
always belong to the most recent one.
"""

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .forcefields import LjParams


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class FgSite:
    site_id: int
    molecule_id: int
    mass: float
    site_type: str


@dataclass
class MoleculeType:
    name: str
    site_names: list
    site_types: list
    masses: np.ndarray
    bonds: list = field(default_factory=list)  # (i, j, k_b, r0)
    angles: list = field(default_factory=list)  # (i, j, k, k_theta, theta0_rad)
    dihedrals: list = field(default_factory=list)  # (i, j, k, l, n, K, phase_rad)
    bead_type: str = ""
    nrexcl: int = 3

    @property
    def n_sites(self):
        return len(self.site_names)

    @property
    def mass(self):
        return float(np.sum(self.masses))

    def excluded_pairs(self):
        """Intra-molecular site pairs within ``nrexcl`` bonds of each other."""
        n = self.n_sites
        adj = [[] for _ in range(n)]
        for i, j, *_ in self.bonds:
            adj[i].append(j)
            adj[j].append(i)
        excluded = set()
        for start in range(n):
            dist = {start: 0}
            todo = deque([start])
            while todo:
                a = todo.popleft()
                if dist[a] == self.nrexcl:
                    continue
                for b in adj[a]:
                    if b not in dist:
                        dist[b] = dist[a] + 1
                        todo.append(b)
            for b in dist:
                if b != start:
                    excluded.add((min(start, b), max(start, b)))
        return excluded


@dataclass(frozen=True)
class Molecule:
    molecule_id: int
    moltype: MoleculeType
    first_site: int

    @property
    def sites(self):
        return range(self.first_site, self.first_site + self.moltype.n_sites)

    @property
    def masses(self):
        return self.moltype.masses

    @property
    def mass(self):
        return self.moltype.mass


@dataclass
class CGView:
    positions: np.ndarray
    masses: np.ndarray
    bead_types: list


class Topology:
    """Immutable system topology plus flat arrays for the compiled kernels."""

    def __init__(self, molecule_types, molecule_counts, fg_params, cg_params, cg_bonds=()):
        self.molecule_types = dict(molecule_types)
        self.molecule_counts = list(molecule_counts)
        self.fg_params = _symmetrize(fg_params, "nonbonded_fg")
        self.cg_params = _symmetrize(cg_params, "nonbonded_cg")
        self.cg_bonds = [tuple(b) for b in cg_bonds]
        self.molecules = []
        first = 0
        for name, count in self.molecule_counts:
            if name not in self.molecule_types:
                raise TopologyError(f"[molecules] references unknown moleculetype {name!r}")
            mt = self.molecule_types[name]
            for _ in range(count):
                self.molecules.append(Molecule(len(self.molecules), mt, first))
                first += mt.n_sites
        self.n_sites = first
        self._validate()
        self._build_arrays()

    @property
    def n_molecules(self):
        return len(self.molecules)

    def site(self, site_id):
        mol = self.molecules[int(self.site_mol[site_id])]
        k = site_id - mol.first_site
        return FgSite(site_id, mol.molecule_id, float(mol.masses[k]), mol.moltype.site_types[k])

    def _validate(self):
        fg_types = sorted({t for mt in self.molecule_types.values() for t in mt.site_types})
        for a in fg_types:
            for b in fg_types:
                if (a, b) not in self.fg_params:
                    raise TopologyError(f"[nonbonded_fg] missing entry for {a} {b}")
        bead_types = sorted({mt.bead_type for mt in self.molecule_types.values()})
        for a in bead_types:
            for b in bead_types:
                if (a, b) not in self.cg_params:
                    raise TopologyError(f"[nonbonded_cg] missing entry for {a} {b}")
        for mt in self.molecule_types.values():
            if mt.n_sites == 0:
                raise TopologyError(f"moleculetype {mt.name} has no sites")
            if not mt.bead_type:
                raise TopologyError(f"moleculetype {mt.name} has no [mapping] entry")
            if np.any(mt.masses <= 0):
                raise TopologyError(f"moleculetype {mt.name} has a non-positive site mass")
            for terms, n_idx in ((mt.bonds, 2), (mt.angles, 3), (mt.dihedrals, 4)):
                for term in terms:
                    if any(i < 0 or i >= mt.n_sites for i in term[:n_idx]):
                        raise TopologyError(
                            f"bonded term {term} of {mt.name} references a site outside the molecule"
                        )
            for _, _, kb, _ in mt.bonds:
                if kb < 0:
                    raise TopologyError(f"negative bond force constant in {mt.name}")
            for *_, kt, _ in mt.angles:
                if kt < 0:
                    raise TopologyError(f"negative angle force constant in {mt.name}")
        for i, j, kb, _ in self.cg_bonds:
            if not (0 <= i < self.n_molecules and 0 <= j < self.n_molecules) or i == j:
                raise TopologyError(f"[cg_bonds] entry ({i + 1}, {j + 1}) is invalid")
            if kb < 0:
                raise TopologyError("negative CG bond force constant")

    def _build_arrays(self):
        nm = self.n_molecules
        self.fg_type_names = sorted({t for mt in self.molecule_types.values() for t in mt.site_types})
        self.bead_type_names = sorted({mt.bead_type for mt in self.molecule_types.values()})
        fg_index = {t: k for k, t in enumerate(self.fg_type_names)}
        bead_index = {t: k for k, t in enumerate(self.bead_type_names)}
        moltype_names = sorted(self.molecule_types)
        moltype_index = {n: k for k, n in enumerate(moltype_names)}

        self.mol_start = np.array([m.first_site for m in self.molecules], dtype=np.int64)
        self.mol_nsites = np.array([m.moltype.n_sites for m in self.molecules], dtype=np.int64)
        self.mol_mass = np.array([m.mass for m in self.molecules], dtype=np.float64)
        self.mol_bead_type = np.array([bead_index[m.moltype.bead_type] for m in self.molecules], dtype=np.int64)
        self.mol_type = np.array([moltype_index[m.moltype.name] for m in self.molecules], dtype=np.int64)

        self.site_mass = np.empty(self.n_sites)
        self.site_mol = np.empty(self.n_sites, dtype=np.int64)
        self.site_type = np.empty(self.n_sites, dtype=np.int64)
        self.site_element = []
        for m in self.molecules:
            s = slice(m.first_site, m.first_site + m.moltype.n_sites)
            self.site_mass[s] = m.masses
            self.site_mol[s] = m.molecule_id
            self.site_type[s] = [fg_index[t] for t in m.moltype.site_types]
            self.site_element.extend(_element(n) for n in m.moltype.site_names)
        # mass fraction m_ik / M_i, used for every COM-derived force
        self.site_mass_fraction = self.site_mass / self.mol_mass[self.site_mol]

        self.fg_table = _lj_table(self.fg_params, self.fg_type_names)
        self.cg_table = _lj_table(self.cg_params, self.bead_type_names)
        self.fg_cutoff = float(np.sqrt(self.fg_table[:, :, 2].max()))
        self.cg_cutoff = float(np.sqrt(self.cg_table[:, :, 2].max()))

        # intra-molecular pairs that still interact (beyond nrexcl)
        offs, flat = [], []
        for name in moltype_names:
            mt = self.molecule_types[name]
            n = mt.n_sites
            ok = np.zeros((n, n), dtype=np.bool_)
            excl = mt.excluded_pairs()
            for a in range(n):
                for b in range(a + 1, n):
                    if (a, b) not in excl:
                        ok[a, b] = ok[b, a] = True
            offs.append(len(flat))
            flat.extend(ok.ravel().tolist())
        self.moltype_nsites = np.array([self.molecule_types[n].n_sites for n in moltype_names], dtype=np.int64)
        self.intra_offset = np.array(offs, dtype=np.int64)
        self.intra_ok = np.array(flat, dtype=np.bool_)
        self.has_intra_pairs = bool(self.intra_ok.any())

        self.bond_ptr, self.bond_idx, self.bond_par = _bonded_csr(self.molecules, "bonds", 2, 2)
        self.angle_ptr, self.angle_idx, self.angle_par = _bonded_csr(self.molecules, "angles", 3, 2)
        self.dih_ptr, self.dih_idx, self.dih_par = _bonded_csr(self.molecules, "dihedrals", 4, 3)

        cgb = sorted(self.cg_bonds)
        self.cg_bond_idx = np.array([[i, j] for i, j, _, _ in cgb], dtype=np.int64).reshape(-1, 2)
        self.cg_bond_par = np.array([[k, r0] for _, _, k, r0 in cgb], dtype=np.float64).reshape(-1, 2)

    def molecule_of_site(self, site_id):
        return self.molecules[int(self.site_mol[site_id])]

    def n_bonded_terms(self):
        return len(self.bond_idx), len(self.angle_idx), len(self.dih_idx)


def _element(site_name):
    letters = "".join(c for c in site_name if c.isalpha())
    return letters[:1].upper() or "X"


def _symmetrize(params, section):
    out = {}
    for (a, b), p in params.items():
        for key in ((a, b), (b, a)):
            if key in out and out[key] != p:
                raise TopologyError(f"[{section}] asymmetric entries for {a} {b}")
            out[key] = p
    return out


def _lj_table(params, names):
    """Table [a, b] -> (sigma, epsilon, cutoff^2, energy shift)."""
    from .forcefields import lj_shift

    n = len(names)
    table = np.zeros((n, n, 4))
    for a, na in enumerate(names):
        for b, nb_ in enumerate(names):
            p = params[(na, nb_)]
            table[a, b] = (p.sigma, p.epsilon, p.cutoff**2, lj_shift(p))
    return table


def _bonded_csr(molecules, kind, n_idx, n_par):
    ptr = [0]
    idx, par = [], []
    for m in molecules:
        for term in getattr(m.moltype, kind):
            idx.append([m.first_site + t for t in term[:n_idx]])
            par.append(list(term[n_idx:n_idx + n_par]))
        ptr.append(len(idx))
    return (
        np.array(ptr, dtype=np.int64),
        np.array(idx, dtype=np.int64).reshape(-1, n_idx),
        np.array(par, dtype=np.float64).reshape(-1, n_par),
    )


# ----------------------------------------------------------------------------
# center of mass and force distribution


def _mol_positions(mol, positions):
    positions = np.asarray(positions, dtype=np.float64)
    sites = mol.sites
    if sites.stop > positions.shape[0]:
        raise TopologyError(
            f"molecule {mol.molecule_id} needs sites {sites.start}..{sites.stop - 1}, "
            f"positions has {positions.shape[0]} rows"
        )
    return positions[sites.start:sites.stop]


def center_of_mass(mol, positions, box=None):
    """Mass-weighted mean position X_i = sum_k m_ik x_ik / M_i.

    With a box, sites are first made contiguous with site 0 by minimum image
    and the resulting COM is wrapped into the box.
    """
    x = _mol_positions(mol, positions)
    m = mol.masses
    if box is not None:
        from .geometry import minimum_image

        x = x[0] + minimum_image(x - x[0], box)
        com = (m[:, None] * x).sum(axis=0) / m.sum()
        return box.wrap(com[None, :])[0]
    return (m[:, None] * x).sum(axis=0) / m.sum()


def distribute_to_sites(mol, f_com):
    """Split a COM force over the sites with weights m_ik / M_i."""
    m = mol.masses
    return (m / m.sum())[:, None] * np.asarray(f_com, dtype=np.float64)[None, :]


@nb.njit(cache=True)
def molecule_coms(pos, mol_off, mol_n, mass, lengths):
    """COMs of the molecules stored contiguously in ``pos``.

    ``mol_off[i]`` is the first row of molecule i. Also returns the largest
    site-to-COM distance, used to validate halo widths.
    """
    nm = mol_off.shape[0]
    com = np.empty((nm, 3))
    rmax = 0.0
    for i in range(nm):
        o = mol_off[i]
        mt = 0.0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for s in range(o, o + mol_n[i]):
            d0 = pos[s, 0] - pos[o, 0]
            d1 = pos[s, 1] - pos[o, 1]
            d2 = pos[s, 2] - pos[o, 2]
            d0 -= lengths[0] * np.floor(d0 / lengths[0] + 0.5)
            d1 -= lengths[1] * np.floor(d1 / lengths[1] + 0.5)
            d2 -= lengths[2] * np.floor(d2 / lengths[2] + 0.5)
            acc0 += mass[s] * d0
            acc1 += mass[s] * d1
            acc2 += mass[s] * d2
            mt += mass[s]
        c0 = acc0 / mt
        c1 = acc1 / mt
        c2 = acc2 / mt
        for s in range(o, o + mol_n[i]):
            d0 = pos[s, 0] - pos[o, 0]
            d1 = pos[s, 1] - pos[o, 1]
            d2 = pos[s, 2] - pos[o, 2]
            d0 -= lengths[0] * np.floor(d0 / lengths[0] + 0.5)
            d1 -= lengths[1] * np.floor(d1 / lengths[1] + 0.5)
            d2 -= lengths[2] * np.floor(d2 / lengths[2] + 0.5)
            r = np.sqrt((d0 - c0) ** 2 + (d1 - c1) ** 2 + (d2 - c2) ** 2)
            if r > rmax:
                rmax = r
        c = (pos[o, 0] + c0, pos[o, 1] + c1, pos[o, 2] + c2)
        for k in range(3):
            v = c[k] - lengths[k] * np.floor(c[k] / lengths[k])
            if v >= lengths[k]:
                v -= lengths[k]
            com[i, k] = v
    return com, rmax


def build_cg_view(topology, positions, box):
    """One bead per molecule at its COM, carrying the molecular mass."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    if positions.shape != (topology.n_sites, 3):
        raise TopologyError(f"expected positions of shape ({topology.n_sites}, 3), got {positions.shape}")
    com, _ = molecule_coms(positions, topology.mol_start, topology.mol_nsites, topology.site_mass, box.lengths)
    beads = [topology.bead_type_names[t] for t in topology.mol_bead_type]
    return CGView(com, topology.mol_mass.copy(), beads)


# ----------------------------------------------------------------------------
# file format


def _sections(text, source):
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise TopologyError(f"{source}:{lineno}: malformed section header {raw!r}")
            section = line[1:-1].strip().lower()
            yield lineno, section, None
            continue
        if section is None:
            raise TopologyError(f"{source}:{lineno}: data outside any section")
        yield lineno, section, line.split()


def parse_topology(text, source="<topology>"):
    moltypes = {}
    current = None
    fg, cg, counts, cg_bonds = {}, {}, [], []
    mapping = {}
    per_type = {"sites", "bonds", "angles", "dihedrals"}
    known = per_type | {"moleculetype", "nonbonded_fg", "nonbonded_cg", "mapping", "molecules", "cg_bonds"}

    def num(tok, lineno):
        try:
            return float(tok)
        except ValueError:
            raise TopologyError(f"{source}:{lineno}: expected a number, got {tok!r}") from None

    def idx(tok, lineno):
        try:
            return int(tok) - 1
        except ValueError:
            raise TopologyError(f"{source}:{lineno}: expected an integer index, got {tok!r}") from None

    def need(tokens, n, lineno, section):
        if len(tokens) < n:
            raise TopologyError(f"{source}:{lineno}: [{section}] needs {n} fields, got {len(tokens)}")

    for lineno, section, tok in _sections(text, source):
        if section not in known:
            raise TopologyError(f"{source}:{lineno}: unknown section [{section}]")
        if tok is None:
            if section == "moleculetype":
                current = {"name": None, "nrexcl": 3, "sites": [], "bonds": [], "angles": [], "dihedrals": []}
                moltypes[id(current)] = current
            elif section in per_type and current is None:
                raise TopologyError(f"{source}:{lineno}: [{section}] before any [moleculetype]")
            continue
        if section == "moleculetype":
            need(tok, 2, lineno, section)
            if tok[0] == "name":
                current["name"] = tok[1]
            elif tok[0] == "nrexcl":
                current["nrexcl"] = int(tok[1])
            else:
                raise TopologyError(f"{source}:{lineno}: unknown moleculetype key {tok[0]!r}")
        elif section == "sites":
            need(tok, 3, lineno, section)
            current["sites"].append((tok[0], tok[1], num(tok[2], lineno)))
        elif section == "bonds":
            need(tok, 4, lineno, section)
            current["bonds"].append((idx(tok[0], lineno), idx(tok[1], lineno), num(tok[2], lineno), num(tok[3], lineno)))
        elif section == "angles":
            need(tok, 5, lineno, section)
            i, j, k = (idx(t, lineno) for t in tok[:3])
            current["angles"].append((i, j, k, num(tok[3], lineno), np.deg2rad(num(tok[4], lineno))))
        elif section == "dihedrals":
            need(tok, 7, lineno, section)
            i, j, k, l = (idx(t, lineno) for t in tok[:4])
            current["dihedrals"].append(
                (i, j, k, l, num(tok[4], lineno), num(tok[5], lineno), np.deg2rad(num(tok[6], lineno)))
            )
        elif section in ("nonbonded_fg", "nonbonded_cg"):
            need(tok, 5, lineno, section)
            try:
                p = LjParams(num(tok[2], lineno), num(tok[3], lineno), num(tok[4], lineno))
            except ValueError as exc:
                raise TopologyError(f"{source}:{lineno}: {exc}") from None
            table = fg if section == "nonbonded_fg" else cg
            for key in ((tok[0], tok[1]), (tok[1], tok[0])):
                if key in table and table[key] != p:
                    raise TopologyError(f"{source}:{lineno}: conflicting [{section}] entry for {tok[0]} {tok[1]}")
            table[(tok[0], tok[1])] = p
        elif section == "mapping":
            need(tok, 2, lineno, section)
            mapping[tok[0]] = (tok[1], [int(t) - 1 for t in tok[2:]], lineno)
        elif section == "molecules":
            need(tok, 2, lineno, section)
            counts.append((tok[0], int(tok[1])))
        elif section == "cg_bonds":
            need(tok, 4, lineno, section)
            cg_bonds.append((idx(tok[0], lineno), idx(tok[1], lineno), num(tok[2], lineno), num(tok[3], lineno)))

    types = {}
    for raw in moltypes.values():
        if raw["name"] is None:
            raise TopologyError(f"{source}: [moleculetype] without a name")
        names = [s[0] for s in raw["sites"]]
        mt = MoleculeType(
            name=raw["name"],
            site_names=names,
            site_types=[s[1] for s in raw["sites"]],
            masses=np.array([s[2] for s in raw["sites"]], dtype=np.float64),
            bonds=raw["bonds"],
            angles=raw["angles"],
            dihedrals=raw["dihedrals"],
            nrexcl=raw["nrexcl"],
        )
        if mt.name in mapping:
            bead, sites, lineno = mapping[mt.name]
            if sites and sorted(sites) != list(range(mt.n_sites)):
                raise TopologyError(f"{source}:{lineno}: mapping of {mt.name} must cover every site exactly once")
            mt.bead_type = bead
        types[mt.name] = mt
    return Topology(types, counts, fg, cg, cg_bonds)


def load_topology(path):
    path = Path(path)
    return parse_topology(path.read_text(), str(path))


def format_topology(topology):
    """Serialize back to the sectioned text format."""
    out = []
    for mt in topology.molecule_types.values():
        out += ["[moleculetype]", f"name   {mt.name}", f"nrexcl {mt.nrexcl}", "", "[sites]", "; name type mass"]
        out += [f"{n} {t} {m!r}" for n, t, m in zip(mt.site_names, mt.site_types, mt.masses.tolist())]
        out += ["", "[bonds]", "; i j k_b r0"]
        out += [f"{i + 1} {j + 1} {kb!r} {r0!r}" for i, j, kb, r0 in mt.bonds]
        out += ["", "[angles]", "; i j k k_theta theta0_deg"]
        out += [f"{i + 1} {j + 1} {k + 1} {kt!r} {float(np.rad2deg(t0))!r}" for i, j, k, kt, t0 in mt.angles]
        out += ["", "[dihedrals]", "; i j k l multiplicity K phase_deg"]
        out += [
            f"{i + 1} {j + 1} {k + 1} {l + 1} {n!r} {kd!r} {float(np.rad2deg(ph))!r}"
            for i, j, k, l, n, kd, ph in mt.dihedrals
        ]
        out.append("")
    for section, table in (("nonbonded_fg", topology.fg_params), ("nonbonded_cg", topology.cg_params)):
        out += [f"[{section}]", "; a b sigma epsilon cutoff"]
        seen = set()
        for (a, b), p in sorted(table.items()):
            if (b, a) in seen:
                continue
            seen.add((a, b))
            out.append(f"{a} {b} {p.sigma!r} {p.epsilon!r} {p.cutoff!r}")
        out.append("")
    out += ["[mapping]", "; moleculetype bead sites"]
    for mt in topology.molecule_types.values():
        out.append(f"{mt.name} {mt.bead_type} " + " ".join(str(k + 1) for k in range(mt.n_sites)))
    if topology.cg_bonds:
        out += ["", "[cg_bonds]", "; mol_i mol_j k_b r0"]
        out += [f"{i + 1} {j + 1} {kb!r} {r0!r}" for i, j, kb, r0 in topology.cg_bonds]
    out += ["", "[molecules]"]
    out += [f"{name} {count}" for name, count in topology.molecule_counts]
    return "\n".join(out) + "\n"


def with_molecule_count(topology, counts):
    """Same molecule types and parameters, different ``[molecules]`` list."""
    return Topology(topology.molecule_types, counts, topology.fg_params, topology.cg_params)
