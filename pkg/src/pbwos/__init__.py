"""Monte Carlo Poisson-Boltzmann solver on unions of spheres.

Walk-on-spheres estimators for the electrostatic potential of a molecule
(union of charged dielectric spheres) immersed in an ionic solvent: a
linearized-model walker with three dielectric-jump schemes and a branching
walker for the full nonlinear model, plus a deterministic radial reference
solver for single-sphere validation.
"""

from .errors import (
    ConfigError,
    EmptyMoleculeError,
    NumericalError,
    PbwosError,
    PqrParseError,
    SingularityError,
    WalkDivergenceError,
)
from .jumps import ANJ, SNJ, TAJ, JumpOutcome, jump, scheme_from_params
from .molecule import (
    Atom,
    Molecule,
    QueryStats,
    SpatialIndex,
    SurfacePoint,
    nearest_atom_brute,
    nearest_atom_indexed,
    parse_pqr,
    project_to_surface,
    signed_distance,
    synthetic_molecule,
    tangent_basis,
)
from .physconst import PbParameters, PhysicalConstants, derive_parameters, u0
from .reference import (
    RadialGrid,
    RadialSolution,
    linear_single_atom,
    nonlinear_single_atom,
)
from .sampling import (
    GwTree,
    RngStream,
    Stratum,
    enumerate_strata,
    sample_gw_tree,
    sample_offspring,
    shape_signature,
    shape_to_tree,
    tree_probability,
    uniform_on_sphere,
)
from .solvers import (
    Estimate,
    SolveRequest,
    exterior_exit_fraction,
    kernels_available,
    solve_linear,
    solve_nonlinear,
)
from .walkers import WalkConfig, WalkOutcome, bwos_walk, kill_probability, uwos_exit, wos_walk

__version__ = "0.1.0"

__all__ = [
    "ANJ",
    "Atom",
    "ConfigError",
    "EmptyMoleculeError",
    "Estimate",
    "GwTree",
    "JumpOutcome",
    "Molecule",
    "NumericalError",
    "PbParameters",
    "PbwosError",
    "PhysicalConstants",
    "PqrParseError",
    "QueryStats",
    "RadialGrid",
    "RadialSolution",
    "RngStream",
    "SNJ",
    "SingularityError",
    "SolveRequest",
    "SpatialIndex",
    "Stratum",
    "SurfacePoint",
    "TAJ",
    "WalkConfig",
    "WalkDivergenceError",
    "WalkOutcome",
    "bwos_walk",
    "derive_parameters",
    "enumerate_strata",
    "exterior_exit_fraction",
    "jump",
    "kernels_available",
    "kill_probability",
    "linear_single_atom",
    "nearest_atom_brute",
    "nearest_atom_indexed",
    "nonlinear_single_atom",
    "parse_pqr",
    "project_to_surface",
    "sample_gw_tree",
    "sample_offspring",
    "scheme_from_params",
    "shape_signature",
    "shape_to_tree",
    "signed_distance",
    "solve_linear",
    "solve_nonlinear",
    "synthetic_molecule",
    "tangent_basis",
    "tree_probability",
    "u0",
    "uniform_on_sphere",
    "uwos_exit",
    "wos_walk",
    "__version__",
]
