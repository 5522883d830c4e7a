"""Post-processing of observable series and trajectories."""

from dataclasses import dataclass

import numpy as np

from .geometry import KB
from .switching import Region, classify_region
from .topology import molecule_coms


@dataclass
class TemperatureSummary:
    mean: float
    std: float
    n_samples: int
    times: np.ndarray
    values: np.ndarray


def temperature_summary(records, equilibration=0.0):
    """Mean and standard deviation of T over samples with time >= ``equilibration`` ps."""
    t = np.array([r.time for r in records])
    temp = np.array([r.temperature for r in records])
    if t.size:
        keep = t - t[0] >= equilibration
        t, temp = t[keep], temp[keep]
    if temp.size == 0:
        raise ValueError("no samples left after the equilibration cut")
    return TemperatureSummary(float(temp.mean()), float(temp.std(ddof=1)) if temp.size > 1 else 0.0,
                              int(temp.size), t, temp)


@dataclass
class EnergyDrift:
    drift: float  # fitted slope times duration, kJ/mol
    slope: float  # kJ/mol/ps
    max_deviation: float  # largest |E(t) - E(0)|, kJ/mol
    duration: float  # ps


def energy_drift(times, energies):
    """Linear-regression drift of a total-energy series."""
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two samples for a drift estimate")
    slope = float(np.polyfit(t - t[0], e, 1)[0])
    duration = float(t[-1] - t[0])
    return EnergyDrift(slope * duration, slope, float(np.abs(e - e[0]).max()), duration)


def drift_in_kT(drift, temperature):
    return drift.drift / (KB * temperature)


@dataclass
class DensityProfile:
    edges: np.ndarray
    centers: np.ndarray
    density: np.ndarray  # molecules per nm^3, frame averaged
    std_error: np.ndarray
    regions: list
    n_frames: int

    def rows(self):
        for c, d, s, r in zip(self.centers, self.density, self.std_error, self.regions):
            yield float(c), float(d), float(s), r


def density_profile(frames, topology, box, geom, bins=50):
    """Molecular number density along x from COM positions.

    Each bin is labelled with the region of its center. The standard error
    is the spread of the per-frame values over sqrt(n_frames).
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    edges = np.linspace(0.0, box.lx, bins + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    slab_volume = box.volume / bins
    per_frame = []
    L = box.lengths
    for pos in frames:
        pos = np.ascontiguousarray(pos, dtype=np.float64)
        if pos.shape != (topology.n_sites, 3):
            raise ValueError(f"frame has shape {pos.shape}, topology needs ({topology.n_sites}, 3)")
        com, _ = molecule_coms(pos, topology.mol_start, topology.mol_nsites, topology.site_mass, L)
        counts, _ = np.histogram(com[:, 0], bins=edges)
        per_frame.append(counts / slab_volume)
    if not per_frame:
        raise ValueError("no frames to analyze")
    arr = np.array(per_frame)
    density = arr.mean(axis=0)
    err = arr.std(axis=0, ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else np.zeros(bins)
    labels = [Region(int(r)).name for r in classify_region(centers, geom, box)]
    return DensityProfile(edges, centers, density, err, labels, len(arr))
