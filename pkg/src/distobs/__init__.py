"""Distributed circle-criterion estimator synthesis, certification, and simulation.

The package assembles coupled per-node linear matrix inequality systems
over a communication graph, solves them with an embedded interior-point
solver, independently verifies the resulting Lyapunov certificates, and
simulates the coupled plant/estimator network.
"""

__version__ = "0.1.0"

from distobs.graph import CommGraph, complete, from_edges, ring
from distobs.model import (
    EstimatorGains,
    PlantModel,
    SynthesisConfig,
    default_config,
    estimator_rhs,
    make_input_signal,
    make_nonlinearity,
    plant_rhs,
    validate_iqc,
    validate_sector,
    zero_gains,
)

__all__ = [
    "CommGraph",
    "ring",
    "complete",
    "from_edges",
    "PlantModel",
    "EstimatorGains",
    "SynthesisConfig",
    "default_config",
    "make_nonlinearity",
    "make_input_signal",
    "plant_rhs",
    "estimator_rhs",
    "zero_gains",
    "validate_sector",
    "validate_iqc",
]
