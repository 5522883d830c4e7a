"""Build an N-molecule box of linear chain molecules (butane by default).

Molecules are placed on a lattice as all-trans zigzag chains with random
orientations, relaxed by a short steepest descent on the all-FG potential
and given Maxwell-Boltzmann velocities.
"""

import logging

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import PeriodicBox
from .integrator import maxwell_boltzmann
from .multiscale import MultiscaleCalculator
from .state import SimState
from .switching import SwitchingGeometry
from .topology import with_molecule_count

log = logging.getLogger(__name__)


def chain_template(moltype):
    """All-trans zigzag coordinates of a linear chain, centered on its COM."""
    n = moltype.n_sites
    bond = {frozenset((i, j)): r0 for i, j, _, r0 in moltype.bonds}
    theta = moltype.angles[0][4] if moltype.angles else np.deg2rad(109.47)
    alpha = 0.5 * (np.pi - theta)
    pos = np.zeros((n, 3))
    for k in range(1, n):
        r0 = bond.get(frozenset((k - 1, k)))
        if r0 is None:
            raise ValueError(f"{moltype.name} is not a linear chain (no bond {k}-{k + 1})")
        pos[k] = pos[k - 1] + r0 * np.array([np.cos(alpha), (-1) ** k * np.sin(alpha), 0.0])
    com = (moltype.masses[:, None] * pos).sum(axis=0) / moltype.mass
    return pos - com


def lattice_points(box, n):
    lengths = box.lengths
    density = (n / box.volume) ** (1.0 / 3.0)
    dims = np.maximum(1, np.floor(lengths * density)).astype(int)
    while np.prod(dims) < n:
        # grow the axis with the widest spacing
        k = int(np.argmax(lengths / dims))
        dims[k] += 1
    grid = np.stack(np.meshgrid(*[(np.arange(d) + 0.5) * (l / d) for d, l in zip(dims, lengths)],
                                indexing="ij"), axis=-1).reshape(-1, 3)
    return grid


def minimize(topology, state, n_iter=100, step=0.01, skin=0.1):
    """Steepest descent on the all-FG potential with an adaptive step (nm)."""
    box = state.box
    everywhere = SwitchingGeometry(0.5 * box.lx, box.lx, 1.0)
    calc = MultiscaleCalculator(topology, box, everywhere, skin=skin)
    pos = box.wrap(state.positions)
    res = calc.compute_all(pos)
    energy = res.energy.total
    forces = res.forces.total
    for _ in range(n_iter):
        fmax = np.abs(forces).max()
        if fmax == 0.0:
            break
        trial = box.wrap(pos + step * forces / fmax)
        res = calc.compute_all(trial)
        if res.energy.total < energy:
            pos, energy, forces = trial, res.energy.total, res.forces.total
            step *= 1.2
        else:
            step *= 0.2
    log.info("minimized to V = %.3f kJ/mol", energy)
    out = state.copy()
    out.positions = pos
    return out


def build_system(template_topology, n_molecules, box, temperature, seed=0, relax_steps=100, moltype=None):
    """Return (topology, state) for ``n_molecules`` copies of one molecule type."""
    if isinstance(box, (int, float)):
        box = PeriodicBox.cubic(float(box))
    if moltype is None:
        moltype = next(iter(template_topology.molecule_types))
    topology = with_molecule_count(template_topology, [(moltype, n_molecules)])
    mt = topology.molecule_types[moltype]
    rng = np.random.default_rng(seed)
    template = chain_template(mt)
    grid = lattice_points(box, n_molecules)
    centers = grid[np.sort(rng.choice(len(grid), n_molecules, replace=False))]
    rot = Rotation.random(n_molecules, random_state=rng).as_matrix()
    pos = (np.einsum("mij,kj->mki", rot, template) + centers[:, None, :]).reshape(-1, 3)
    state = SimState(box.wrap(pos), np.zeros_like(pos), box)
    if relax_steps:
        state = minimize(topology, state, relax_steps)
    state.velocities = maxwell_boltzmann(topology.site_mass, temperature, rng)
    return topology, state
