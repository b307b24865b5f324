"""Finite-element simulation of nonlinear Kelvin-Voigt viscoelasticity.

The production path is an explicit linearized scheme: per step, the velocity
minimizes a linearized power functional (stress power plus a quadratic
dissipation form around the current state) and the deformation advances by
forward Euler.  Reference solvers (linear Kelvin-Voigt stepping and the
implicit nonlinear minimizing-movement scheme) live in :mod:`viscofem.oracle`
for validation.
"""

from .assembly import (LoadSpec, SymmetricSparseMatrix, apply_dirichlet,
                       assemble_mass, assemble_rhs, assemble_stiffness,
                       constrained_dofs, total_elastic_energy)
from .fem import (DeformationField, DofMap, P2Space, QuadratureRule,
                  deformation_gradient, make_quadrature, shape_gradients)
from .linsolve import LinearSolveError, SolveResult, SolverConfig, solve_spd
from .material import (MaterialParams, check_R_frame_indifference,
                       dissipation_R, dissipation_distance, energy_W,
                       fY_min_value, fY_minimizer, power_density_fY,
                       stress_PK1, stress_PK2)
from .mesh import (BoxSpec, Mesh, build_box_mesh, tag_dirichlet, tet_volumes,
                   validate_mesh)
from .stepper import (EnergyLedger, Scenario, SimulationState, StepRejectedError,
                      Stepper, ZeroDissipationError, energy_dissipation_error,
                      fit_convergence_slope, run)

__version__ = "0.1.0"

__all__ = [
    "BoxSpec", "Mesh", "build_box_mesh", "tag_dirichlet", "tet_volumes",
    "validate_mesh",
    "P2Space", "DofMap", "DeformationField", "QuadratureRule",
    "make_quadrature", "shape_gradients", "deformation_gradient",
    "MaterialParams", "energy_W", "stress_PK1", "stress_PK2",
    "dissipation_distance", "dissipation_R", "power_density_fY",
    "fY_minimizer", "fY_min_value", "check_R_frame_indifference",
    "LoadSpec", "SymmetricSparseMatrix", "assemble_stiffness", "assemble_rhs",
    "assemble_mass", "apply_dirichlet", "constrained_dofs",
    "total_elastic_energy",
    "SolverConfig", "SolveResult", "solve_spd", "LinearSolveError",
    "Stepper", "Scenario", "SimulationState", "EnergyLedger",
    "StepRejectedError", "ZeroDissipationError", "run",
    "energy_dissipation_error", "fit_convergence_slope",
]
