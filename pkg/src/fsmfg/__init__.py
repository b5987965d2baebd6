"""Finite-state mean field games.

Solvers for the coupled Kolmogorov/Hamilton-Jacobi initial-terminal value
problem, the exact N+1-player equilibrium ODE, stationary solutions and
trend-to-equilibrium experiments, potential-game structure (Hamiltonian
conservation, action functional, master field, planning), plus a CLI
experiment runner with seeded, reproducible outputs.
"""

from .backend import backend_name, compiled_available
from .core import (IntegrationError, SimplexError, StateIndexer,
                   StateSpaceTooLarge, TimeGrid, Trajectory, as_simplex,
                   delta, enumerate_states, integrate, sharp_norm)
from .cost import (ControlSolveError, CostModel, Coupling, QuadraticCost,
                   coupling_affine, coupling_gradient, coupling_self,
                   coupling_zero, hamiltonian, hamiltonian_vector,
                   lipschitz_audit, optimal_control, psi_affine, psi_linear,
                   psi_zero, spot_check_model, superdifferential_check)
from .mfg import (FixedPointError, MfgSolution, StationaryError,
                  StationaryTriple, monotonicity_audit, multistart_stationary,
                  solve_hj, solve_kolmogorov, solve_mfg, solve_stationary,
                  trend_experiment, verify_value_by_simulation)
from .nplayer import (JointLaw, NField, PathBatch, RateBoundError,
                      convergence_study, estimate_VW, gradient_profile,
                      propagate_exact_law, simulate_paths, solve_equilibrium)
from .potential import (PlanningError, PotentialModel, action,
                        criticality_probe, gradient_form_asymmetry,
                        hamiltonian_H, legendre_Fstar, master_field,
                        potential_from_affine, solve_planning)

__version__ = "0.1.0"

__all__ = [
    "__version__", "backend_name", "compiled_available",
    "IntegrationError", "SimplexError", "StateIndexer", "StateSpaceTooLarge",
    "TimeGrid", "Trajectory", "as_simplex", "delta", "enumerate_states",
    "integrate", "sharp_norm",
    "ControlSolveError", "CostModel", "Coupling", "QuadraticCost",
    "coupling_affine", "coupling_gradient", "coupling_self", "coupling_zero",
    "hamiltonian", "hamiltonian_vector", "lipschitz_audit", "optimal_control",
    "psi_affine", "psi_linear", "psi_zero", "spot_check_model",
    "superdifferential_check",
    "FixedPointError", "MfgSolution", "StationaryError", "StationaryTriple",
    "monotonicity_audit", "multistart_stationary", "solve_hj",
    "solve_kolmogorov", "solve_mfg", "solve_stationary", "trend_experiment",
    "verify_value_by_simulation",
    "JointLaw", "NField", "PathBatch", "RateBoundError", "convergence_study",
    "estimate_VW", "gradient_profile", "propagate_exact_law", "simulate_paths",
    "solve_equilibrium",
    "PlanningError", "PotentialModel", "action", "criticality_probe",
    "gradient_form_asymmetry", "hamiltonian_H", "legendre_Fstar",
    "master_field", "potential_from_affine",
    "solve_planning",
]
