"""Adaptive-resolution molecular dynamics with Hamiltonian multiscale forces."""

from .geometry import KB, GeometryError, PeriodicBox, instantaneous_temperature, minimum_image
from .integrator import IntegrationError, IntegratorParams, rng_stream, sd_step
from .multiscale import (
    MultiscaleCalculator,
    TransitionPotential,
    multiscale_evaluate,
    multiscale_forces,
    multiscale_potential,
)
from .parallel import ParallelEngine, ProtocolError
from .state import SimState
from .switching import Region, SwitchingGeometry, classify_region, dlambda_dX, switching_lambda
from .topology import Topology, TopologyError, build_cg_view, center_of_mass, distribute_to_sites, load_topology

__all__ = [
    "KB", "GeometryError", "PeriodicBox", "instantaneous_temperature", "minimum_image",
    "IntegrationError", "IntegratorParams", "rng_stream", "sd_step",
    "MultiscaleCalculator", "TransitionPotential", "multiscale_evaluate", "multiscale_forces",
    "multiscale_potential", "ParallelEngine", "ProtocolError", "SimState",
    "Region", "SwitchingGeometry", "classify_region", "dlambda_dX", "switching_lambda",
    "Topology", "TopologyError", "build_cg_view", "center_of_mass", "distribute_to_sites", "load_topology",
]
