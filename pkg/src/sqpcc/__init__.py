"""Full-step sequential quadratic programming with complementarity constraints (SQPCC)."""

from .analysis import (
    check_b_stationarity,
    check_mpcc_licq,
    check_mpcc_ssosc,
    check_ulsc_pulsc,
    classify_stationarity,
    estimate_order,
    fit_contraction,
    stabilization_report,
)
from .denseqp import QpData, QpSolution, solve_qp
from .expr import differentiate, evaluate, parse_expr, simplify
from .model import (
    MpccProblem,
    NlpProblem,
    PrimalDualPoint,
    branch_nlp,
    complementarity_partition,
    mpcc_kkt_residual,
    nlp_reformulation,
    parse_model,
    relaxed_nlp,
)
from .qpcc import QpccData, StepPolicy, solve_qpcc_enumerate
from .registry import get_problem, problem_names
from .solver import HessianStrategy, SolveOptions, SolveTrace, sqp_solve, sqpcc_solve

__version__ = "0.1.0"

__all__ = [
    "check_b_stationarity", "check_mpcc_licq", "check_mpcc_ssosc", "check_ulsc_pulsc",
    "classify_stationarity", "estimate_order", "fit_contraction", "stabilization_report",
    "QpData", "QpSolution", "solve_qp",
    "differentiate", "evaluate", "parse_expr", "simplify",
    "MpccProblem", "NlpProblem", "PrimalDualPoint", "branch_nlp", "complementarity_partition",
    "mpcc_kkt_residual", "nlp_reformulation", "parse_model", "relaxed_nlp",
    "QpccData", "StepPolicy", "solve_qpcc_enumerate",
    "get_problem", "problem_names",
    "HessianStrategy", "SolveOptions", "SolveTrace", "sqp_solve", "sqpcc_solve",
]
