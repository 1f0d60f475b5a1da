"""Optimal control of diffusions on a star junction.

Edges meet at a single vertex where the process is redistributed by a
controlled set of weights. The package solves the backward HJB equation with
a nonlinear junction condition, extracts the optimal feedback, simulates the
controlled process and checks the value against Monte Carlo.
"""

from .hamiltonians import edge_hamiltonian, edge_hamiltonian_closed, edge_hamiltonian_grid
from .junction import JunctionEval, junction_hamiltonian, solve_linear, solve_quadratic
from .pde import FeedbackPolicy, SolverError, SpaceTimeGrid, ValueGrid, extract_policy, solve_backward
from .problem import (ControlProblem, EdgeDynamics, EdgePoint, Horizon, JunctionCost, JunctionGeometry,
                      ProblemError, TerminalCondition, validate_problem)
from .simulator import Ensemble, PathSample, RngStream, simulate_ensemble, simulate_path
from .verification import McEstimate, VerificationReport, mc_value, run_verification

__version__ = "0.1.0"
