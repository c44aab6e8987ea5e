"""Rank-revealing CP decomposition with group-sparse regularization."""

__version__ = "0.1.0"

from .tensor import (FactorSet, as_tensor, column_gradient, fold, gram_complement,
                     khatri_rao, kr_complement, objective_smooth, reconstruct, unfold)
from .prox import ProxKind, prox_group_l0, prox_unit_sphere
from .solver import (DoubleLoopSolver, SolverConfig, SolveTrace, TraceRecord,
                     extrapolation_weight, lambda_step, outer_solve, sub_bc_pgd)
from .rank_reduce import RankCollapse, SupportTracker, outer_solve_rr, prune, support
from .metrics import AlignmentResult, align_components, cp_als, rel_err, rmsep
from .io import read_tensor, synth, write_tensor

__all__ = [
    "FactorSet", "as_tensor", "column_gradient", "fold", "gram_complement", "khatri_rao",
    "kr_complement", "objective_smooth", "reconstruct", "unfold",
    "ProxKind", "prox_group_l0", "prox_unit_sphere",
    "DoubleLoopSolver", "SolverConfig", "SolveTrace", "TraceRecord", "extrapolation_weight",
    "lambda_step", "outer_solve", "sub_bc_pgd",
    "RankCollapse", "SupportTracker", "outer_solve_rr", "prune", "support",
    "AlignmentResult", "align_components", "cp_als", "rel_err", "rmsep",
    "read_tensor", "synth", "write_tensor",
]
