"""Block max-min / min-max and least-squares isotonic regression on lattices,
random designs and DAGs, with rate calculators and a simulation harness."""

__version__ = "0.1.0"

from .errors import CapacityError, ConsistencyError, InvalidGraphError, SearchExhausted
from .lattice import Field, LatticeShape, PointCloud, build_compressed_grid, is_monotone
from .estimators import (
    EstimatorKind, block_estimate, block_mid_lattice, evaluate_at, max_min_lattice,
    min_max_lattice, noiseless_targets,
)
from .graph import Dag, generalized_max_min, lse_minimax_bruteforce
from .lse import SolveOptions, lse_dag, lse_lattice, pava_1d, projection_certificate
from .simulation import ExperimentSpec, NoiseModel, monte_carlo

__all__ = [
    "CapacityError", "ConsistencyError", "InvalidGraphError", "SearchExhausted",
    "Field", "LatticeShape", "PointCloud", "build_compressed_grid", "is_monotone",
    "EstimatorKind", "block_estimate", "block_mid_lattice", "evaluate_at", "max_min_lattice",
    "min_max_lattice", "noiseless_targets", "Dag", "generalized_max_min",
    "lse_minimax_bruteforce", "SolveOptions", "lse_dag", "lse_lattice", "pava_1d",
    "projection_certificate", "ExperimentSpec", "NoiseModel", "monte_carlo",
]
