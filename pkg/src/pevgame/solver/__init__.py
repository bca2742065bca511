"""Exact convex MIQP solving: QP relaxations, branch-and-bound and an enumeration oracle."""

from .bnb import BRUTE_FORCE_CAP, BnBNode, SolveResult, SolveStatus, brute_force, solve
from .options import SolveOptions
from .qp import DenseProgram, RelaxationResult, RelaxStatus, SolverFailure, solve_qp_relaxation

__all__ = [
    "BRUTE_FORCE_CAP",
    "BnBNode",
    "DenseProgram",
    "RelaxStatus",
    "RelaxationResult",
    "SolveOptions",
    "SolveResult",
    "SolveStatus",
    "SolverFailure",
    "brute_force",
    "solve",
    "solve_qp_relaxation",
]
