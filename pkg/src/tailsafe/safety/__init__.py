from .filter import CbfQpFilter, FilterOutcome, filter_step, safety_filter, sim_timestamp
from .problem import (
    BarrierSpec,
    QpProblem,
    QpSolution,
    SafetyParams,
    SafetyState,
    assemble_qp,
    check_invariance_margin,
    eta_b_star,
    shrink_guards,
    solve_qp,
)
from .qp import DenseResult, QpSettings, kkt_residuals, solve_dense_qp

__all__ = [
    "BarrierSpec",
    "CbfQpFilter",
    "DenseResult",
    "FilterOutcome",
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "SafetyParams",
    "SafetyState",
    "assemble_qp",
    "check_invariance_margin",
    "eta_b_star",
    "filter_step",
    "kkt_residuals",
    "safety_filter",
    "shrink_guards",
    "sim_timestamp",
    "solve_dense_qp",
    "solve_qp",
]
