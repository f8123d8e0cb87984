"""Meshfree incompressible Navier-Stokes solvers on moving point clouds.

Generalized finite difference stencils (classical least-squares and
PDE-augmented), three pressure-velocity coupling schemes, Lagrangian cloud
management, and the benchmark cases used to compare them.
"""

from .boundary import BCRow, PressureBC, VelocityBC
from .cases import (CASES, CaseDefinition, bifurcated_tube_case,
                    detect_free_surface, make_case, sloshing_case,
                    taylor_green_case, update_active)
from .cloud import (FREE_SURFACE, INFLOW, INTERIOR, OUTFLOW, WALL,
                    CloudParams, NeighborTable, PointCloud, build_neighbors,
                    compute_volumes, generate_rectangle_cloud, make_cloud,
                    manage_cloud)
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (FluxLedger, convergence_rate, divergence_field,
                          divergence_measures, epsilon2, taylor_residual_J,
                          volume_error)
from .operators import (DegenerateNeighborhoodError, OperatorSet,
                        WeightConfig, apply_operator, build_operator_set,
                        laplace_divgrad_gap)
from .simulation import RunResult, StepRecord, TimeControls, run
from .solvers import (MaterialParams, SolverConfig, SolverFailure,
                      StepReport, advance, coupled_new_step, penalty_step,
                      projection_step)
from .sparselin import SolveStats, assemble, bicgstab
from .tiwari import (TiwariConfig, build_coupled_stencil,
                     build_scalar_tiwari_stencil, solve_scalar_pde)
from .vtkio import read_vtk_snapshot, write_vtk_snapshot

__version__ = "0.1.0"

__all__ = [
    "BCRow", "PressureBC", "VelocityBC",
    "CASES", "CaseDefinition", "bifurcated_tube_case", "detect_free_surface",
    "make_case", "sloshing_case", "taylor_green_case", "update_active",
    "FREE_SURFACE", "INFLOW", "INTERIOR", "OUTFLOW", "WALL",
    "CloudParams", "NeighborTable", "PointCloud", "build_neighbors",
    "compute_volumes", "generate_rectangle_cloud", "make_cloud",
    "manage_cloud",
    "ConfigError", "RunConfig", "parse_config",
    "FluxLedger", "convergence_rate", "divergence_field",
    "divergence_measures", "epsilon2", "taylor_residual_J", "volume_error",
    "DegenerateNeighborhoodError", "OperatorSet", "WeightConfig",
    "apply_operator", "build_operator_set", "laplace_divgrad_gap",
    "RunResult", "StepRecord", "TimeControls", "run",
    "MaterialParams", "SolverConfig", "SolverFailure", "StepReport",
    "advance", "coupled_new_step", "penalty_step", "projection_step",
    "SolveStats", "assemble", "bicgstab",
    "TiwariConfig", "build_coupled_stencil", "build_scalar_tiwari_stencil",
    "solve_scalar_pde",
    "read_vtk_snapshot", "write_vtk_snapshot",
    "__version__",
]
