"""Linear and mixed-binary programming: dense simplex, branch-and-bound, LP export."""
from .lpformat import export_lp
from .milp import solve_milp
from .model import (CS_TOL, FEAS_TOL, GAP_TOL, INFEASIBLE, ITERATION_LIMIT, NODE_LIMIT, OPTIMAL,
                    UNBOUNDED, LinearProgram, LPBuilder, SolveResult, dual_objective)
from .simplex import solve_lp

__all__ = [
    "LinearProgram", "LPBuilder", "SolveResult", "solve_lp", "solve_milp", "export_lp",
    "dual_objective", "FEAS_TOL", "CS_TOL", "GAP_TOL", "OPTIMAL", "INFEASIBLE", "UNBOUNDED",
    "ITERATION_LIMIT", "NODE_LIMIT",
]
