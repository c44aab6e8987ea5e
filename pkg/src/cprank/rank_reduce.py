"""
Rank reduction: detect a stable support of the last factor, drop its zero
columns everywhere and continue with the smaller rank.

Once pruned, the last factor is updated by plain gradient steps (no sparsity
term), so the support cannot change again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .solver import DoubleLoopSolver, SolverConfig, TraceRecord
from .tensor import FactorSet, kr_complement

__all__ = [
    "RankCollapse",
    "SupportTracker",
    "support",
    "prune",
    "support_closed",
    "outer_solve_rr",
]


class RankCollapse(ValueError):
    """Raised by :func:`prune` when asked to keep no column at all."""


def support(m) -> frozenset:
    """Indices of the nonzero columns of `m` (exact zero test)."""
    m = np.asarray(m)
    return frozenset(int(j) for j in np.flatnonzero(np.any(m != 0, axis=0)))


def prune(fs: FactorSet, keep) -> FactorSet:
    """Keep the columns in `keep` (in increasing order) of every factor."""
    keep = sorted(int(j) for j in keep)
    if not keep:
        raise RankCollapse("rank collapsed to zero")
    if keep[0] < 0 or keep[-1] >= fs.rank:
        raise ValueError(f"column index out of range for rank {fs.rank}")
    return FactorSet([a[:, keep] for a in fs], copy=True)


def support_closed(x_unf_last: np.ndarray, fs: FactorSet, lam: float, epsilon: float) -> bool:
    """True if no zero column of the last factor would survive a prox step at `lam`.

    For a zero column ``j`` the proximal gradient candidate is
    ``-(A G[:, j] - M[:, j]) / (epsilon + G[j, j])``; it is kept iff its squared
    norm reaches ``2 lam / (epsilon + G[j, j])``.
    """
    last = fs.ndim - 1
    A = fs[last]
    dead = np.flatnonzero(~np.any(A != 0, axis=0))
    if dead.size == 0:
        return True
    D = kr_complement(fs, last)
    G = D.T @ D
    M = x_unf_last @ D
    for j in dead:
        denom = epsilon + G[j, j]
        g = A @ G[:, j] - M[:, j]
        if (g @ g) / denom >= 2.0 * lam:
            return False
    return True


@dataclass
class SupportTracker:
    """Counts consecutive iterations with an unchanged support.

    The count only advances while the support is *closed*: the zero columns
    could not be reactivated even at the smallest ``lambda``. Without that gate
    the long all-zero phase at the start of the continuation would look
    stable and trigger a prune to rank zero.
    """

    window: int
    last_support: Optional[frozenset] = None
    stable_count: int = 0
    history: list = field(default_factory=list)

    def update(self, supp: frozenset, closed: bool = True) -> bool:
        """Record the support after an iteration; return True once the window is reached."""
        if self.last_support is None or supp != self.last_support or not closed:
            self.stable_count = 0
        else:
            self.stable_count = min(self.stable_count + 1, self.window)
        self.last_support = supp
        self.history.append(self.stable_count)
        return self.stable_count >= self.window


def outer_solve_rr(t, cfg: SolverConfig, init: Optional[FactorSet] = None):
    """Double-loop solver with a single rank-reduction event.

    Returns
    -------
    fs : FactorSet
        Final factors of rank ``|S|``; rank 0 if every column vanished.
    trace : SolveTrace
        ``trace.pruned_at`` is the index of the iteration after which the
        prune happened and ``trace.prune_rel_err`` the relative error just
        before and after it.
    """
    solver = DoubleLoopSolver(t, cfg, init)
    tracker = SupportTracker(cfg.stability_window)
    last = solver.N - 1
    collapsed = False

    while solver.k < cfg.max_outer and not solver.converged:
        rec: TraceRecord = solver.step()
        if not solver.regularized:
            continue
        supp = support(solver.X[last])
        closed = support_closed(solver.unfoldings[last], solver.factors,
                                cfg.lambda_min, cfg.epsilon)
        if tracker.update(supp, closed):
            before = rec.rel_err
            if not supp:
                collapsed = True
                break
            solver.restrict(supp)
            after = math.sqrt(2.0 * max(solver.f_curr, 0.0)) / solver.norm_x
            solver.trace.pruned_at = rec.k
            solver.trace.prune_rel_err = (before, after)

    trace = solver.trace
    if collapsed:
        trace.status = "Converged"
        trace.pruned_at = trace.records[-1].k
        trace.prune_rel_err = (trace.records[-1].rel_err, 1.0)
        empty = FactorSet([np.zeros((n, 0)) for n in solver.t.shape], copy=False)
        return empty, trace
    trace.status = "Converged" if solver.converged else "MaxIters"
    return FactorSet([a.copy() for a in solver.X], copy=False), trace
