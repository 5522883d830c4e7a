from dataclasses import dataclass, field

import numpy as np

from .geometry import PeriodicBox


@dataclass
class SimState:
    """Positions and velocities of every FG site.

    Velocities are the leapfrog half-step values v(t - dt/2) when the state
    comes out of the integrator. CG bead positions are always derived from
    the site positions, never stored.
    """

    positions: np.ndarray
    velocities: np.ndarray
    box: PeriodicBox
    step: int = 0
    time: float = 0.0
    forces: np.ndarray = field(default=None, repr=False)
    kinetic_energy: float = None  # on-step value from the last integration

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.velocities is None:
            self.velocities = np.zeros_like(self.positions)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (n, 3), got {self.positions.shape}")
        if self.velocities.shape != self.positions.shape:
            raise ValueError("velocities and positions differ in shape")

    @property
    def n_sites(self):
        return self.positions.shape[0]

    def copy(self):
        return SimState(self.positions.copy(), self.velocities.copy(), self.box, self.step, self.time,
                        None if self.forces is None else self.forces.copy())

    def cg_view(self, topology):
        from .topology import build_cg_view

        return build_cg_view(topology, self.positions, self.box)
