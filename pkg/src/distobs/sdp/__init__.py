"""Embedded solver for small dense semidefinite feasibility/optimization problems."""

from distobs.sdp.problem import MatExpr, SdpProblem, block
from distobs.sdp.solver import (
    STATUS_FEASIBLE,
    STATUS_INFEASIBLE,
    STATUS_ITERATION_LIMIT,
    STATUS_NUMERICAL_FAILURE,
    STATUS_OPTIMAL,
    SdpSolution,
    SolverOptions,
    solve,
)

__all__ = [
    "MatExpr",
    "SdpProblem",
    "block",
    "SdpSolution",
    "SolverOptions",
    "solve",
    "STATUS_FEASIBLE",
    "STATUS_OPTIMAL",
    "STATUS_INFEASIBLE",
    "STATUS_NUMERICAL_FAILURE",
    "STATUS_ITERATION_LIMIT",
]
