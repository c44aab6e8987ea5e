"""
Double-loop block-coordinate proximal gradient solver with extrapolation.

Model: minimize over A^(1), ..., A^(N)

    1/2 ||X - [[A^(1), ..., A^(N)]]||^2 + lam * #nonzero columns of A^(N)

with every column of A^(1), ..., A^(N-1) constrained to unit length.

Each outer iteration sweeps the modes once. A mode is updated by
``inner_iters + 1`` Gauss-Seidel cycles over its columns, each a proximal
gradient step with step size ``1 / (epsilon + d_j^T d_j)``, evaluated with the
other modes held at their extrapolated points. If the swept point fails the
sufficient decrease test the sweep is repeated from the plain iterates.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator, List, Optional

import numpy as np

from .prox import ProxKind
from .tensor import (FactorSet, as_tensor, check_bound, kr_complement,
                     reconstruct, unfold)

__all__ = [
    "SolverConfig",
    "TraceRecord",
    "SolveTrace",
    "extrapolation_weights",
    "extrapolation_weight",
    "lambda_step",
    "sub_bc_pgd",
    "init_factors",
    "DoubleLoopSolver",
    "outer_solve",
]

logger = logging.getLogger(__name__)

# relative slack allowed in the sufficient-decrease bookkeeping
DESCENT_SLACK = 1e-10


@dataclass
class SolverConfig:
    """Tunables of the double-loop solver.

    Defaults follow the reference parameter choices: ``m = 7`` inner cycles,
    ``epsilon = 1e-5``, ``gamma = 0.9``, ``lambda`` decaying geometrically by
    ``kappa = 0.97`` from ``lambda_max = 1000`` down to ``lambda_min = 1e-4``,
    and a support stability window ``L = 20`` for rank reduction.
    """

    rank_init: int = 5
    epsilon: float = 1e-5
    inner_iters: int = 7
    gamma: float = 0.9
    lambda_max: float = 1000.0
    lambda_min: float = 1e-4
    kappa: float = 0.97
    stop_tol: float = 1e-6
    max_outer: int = 2000
    seed: int = 0
    stability_window: int = 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        if int(self.rank_init) != self.rank_init or self.rank_init < 1:
            raise ValueError("rank_init must be a positive integer")
        if int(self.inner_iters) != self.inner_iters or self.inner_iters < 1:
            raise ValueError("inner_iters must be a positive integer")
        if int(self.max_outer) != self.max_outer or self.max_outer < 1:
            raise ValueError("max_outer must be a positive integer")
        if int(self.stability_window) != self.stability_window or self.stability_window < 1:
            raise ValueError("stability_window must be a positive integer")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if not 0 <= self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 <= lambda_min <= lambda_max")
        if not self.stop_tol >= 0:
            raise ValueError("stop_tol must be nonnegative")
        self.rank_init = int(self.rank_init)
        self.inner_iters = int(self.inner_iters)
        self.max_outer = int(self.max_outer)
        self.stability_window = int(self.stability_window)

    @property
    def tau(self) -> float:
        return self.epsilon / self.inner_iters

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TraceRecord:
    """One outer iteration.

    ``F`` is the objective at the new iterate and ``F_prev`` the objective at
    the previous iterate, both evaluated with this iteration's ``lam``.
    ``step_sq`` is ``||X^{k+1} - X^k||^2``. ``unit_dev`` is the largest
    deviation from 1 of a column norm in the constrained modes.
    """

    k: int
    F: float
    rel_err: float
    lam: float
    w: float
    support_size: int
    safeguard_used: bool
    F_prev: float = math.nan
    step_sq: float = math.nan
    rank: int = 0
    unit_dev: float = 0.0

    def descent_excess(self, tau: float) -> float:
        """``F + tau/2 * step_sq - F_prev``; nonpositive when the decrease holds."""
        return self.F + 0.5 * tau * self.step_sq - self.F_prev


TRACE_COLUMNS = ("k", "F", "RelErr", "lambda", "w_k", "support_size", "safeguard_used")


@dataclass
class SolveTrace:
    records: List[TraceRecord] = field(default_factory=list)
    status: str = "Running"
    pruned_at: Optional[int] = None
    prune_rel_err: Optional[tuple] = None

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def descent_violations(self, tau: float, slack: float = DESCENT_SLACK) -> list:
        """Iterations whose sufficient-decrease inequality fails beyond `slack`."""
        return [r.k for r in self.records
                if r.descent_excess(tau) > slack * abs(r.F_prev)]

    def rows(self):
        for r in self.records:
            yield (r.k, repr(r.F), repr(r.rel_err), repr(r.lam), repr(r.w),
                   r.support_size, int(r.safeguard_used))

    def write(self, path, delimiter: str = "\t"):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            writer.writerows(self.rows())

    @classmethod
    def read(cls, path, delimiter: str = "\t") -> "SolveTrace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            for row in reader:
                trace.records.append(TraceRecord(
                    k=int(row["k"]), F=float(row["F"]), rel_err=float(row["RelErr"]),
                    lam=float(row["lambda"]), w=float(row["w_k"]),
                    support_size=int(row["support_size"]),
                    safeguard_used=bool(int(row["safeguard_used"]))))
        return trace


def extrapolation_weights(gamma: float) -> Iterator[float]:
    """Yield ``w_0, w_1, ...`` with ``w_k = min((t_{k-1} - 1) / t_k, gamma)``.

    ``t_{-1} = t_0 = 1`` and ``t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2``.
    """
    t_prev, t_curr = 1.0, 1.0
    while True:
        yield min((t_prev - 1.0) / t_curr, gamma)
        t_prev, t_curr = t_curr, 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_curr * t_curr))


def extrapolation_weight(k: int, gamma: float) -> float:
    """The ``k``-th extrapolation weight (convenience wrapper)."""
    for i, w in enumerate(extrapolation_weights(gamma)):
        if i == k:
            return w


def lambda_step(lam: float, cfg: SolverConfig) -> float:
    return max(cfg.lambda_min, cfg.kappa * lam)


def sub_bc_pgd(x_unf: np.ndarray, point: FactorSet, mode: int, inner_iters: int,
               epsilon: float, prox: ProxKind) -> np.ndarray:
    """Approximately minimize over block `mode` with the other blocks of `point` fixed.

    Runs ``inner_iters + 1`` cycles over the columns of ``point[mode]``. The
    column step uses the Gram matrix ``D^T D`` and the MTTKRP ``X_(mode) D``,
    both constant while the other blocks are fixed.

    Returns a new matrix; `point` is not modified.
    """
    A = np.array(point[mode], dtype=np.float64, copy=True)
    if A.shape[0] != x_unf.shape[0]:
        raise ValueError(f"factor has {A.shape[0]} rows, unfolding has {x_unf.shape[0]}")
    D = kr_complement(point, mode)
    if D.shape[0] != x_unf.shape[1]:
        raise ValueError("factor shapes do not match the unfolded tensor")
    G = D.T @ D
    M = x_unf @ D
    steps = 1.0 / (epsilon + np.diag(G))
    R = A.shape[1]
    for _ in range(inner_iters + 1):
        for j in range(R):
            s = steps[j]
            g = A @ G[:, j] - M[:, j]
            A[:, j] = prox.apply(A[:, j] - s * g, s)
    return A


def init_factors(shape, rank: int, rng: np.random.Generator) -> FactorSet:
    """Standard normal factors; the constrained modes are normalized columnwise."""
    mats = [rng.standard_normal((n, rank)) for n in shape]
    for a in mats[:-1]:
        nrm = np.linalg.norm(a, axis=0)
        nrm[nrm == 0] = 1.0
        a /= nrm
    return FactorSet(mats, copy=False)


def _unit_dev(factors) -> float:
    dev = 0.0
    for a in factors[:-1]:
        if a.shape[1]:
            dev = max(dev, float(np.max(np.abs(np.linalg.norm(a, axis=0) - 1.0))))
    return dev


class DoubleLoopSolver:
    """Stateful driver for the outer extrapolated loop.

    Holds the iterate ``X^k``, the anchor ``Xbar^k``, the continuation
    parameter and the trace. :meth:`step` performs one outer iteration;
    :meth:`restrict` drops columns (used by rank reduction).

    Parameters
    ----------
    t : ndarray
        Data tensor, at least 3-way.
    cfg : SolverConfig
    init : FactorSet, optional
        Starting point; drawn from ``cfg.seed`` when omitted. Constrained
        modes are projected onto the unit sphere.
    """

    def __init__(self, t, cfg: SolverConfig, init: Optional[FactorSet] = None):
        self.t = as_tensor(t)
        self.cfg = cfg
        self.N = self.t.ndim
        self.unfoldings = [unfold(self.t, i) for i in range(self.N)]
        norm = float(np.linalg.norm(self.t))
        # zero data: report absolute residual norms instead of relative ones
        self.norm_x = norm if norm > 0 else 1.0

        if init is None:
            init = init_factors(self.t.shape, cfg.rank_init, np.random.default_rng(cfg.seed))
        else:
            init = init.copy()
            for i in range(self.N - 1):
                init.factors[i] = np.column_stack(
                    [ProxKind.sphere().apply(c, 1.0) for c in init[i].T])
        check_bound(self.t, init)
        self.X = init.factors
        self.Xbar = [a.copy() for a in self.X]
        self.lam = cfg.lambda_max
        self.regularized = True
        self.k = 0
        self._weights = extrapolation_weights(cfg.gamma)
        self.f_curr = self._smooth(self.X)
        self.trace = SolveTrace()
        self._prev_rel_err = None
        self.converged = False

    # -- objective pieces -------------------------------------------------
    def _smooth(self, mats) -> float:
        r = self.t - reconstruct(FactorSet(mats, copy=False))
        return 0.5 * float(np.vdot(r, r))

    def _penalty(self, last: np.ndarray, lam: float) -> float:
        if not self.regularized:
            return 0.0
        return lam * int(np.count_nonzero(np.any(last != 0, axis=0)))

    def objective(self, lam: Optional[float] = None) -> float:
        lam = self.lam if lam is None else lam
        return self.f_curr + self._penalty(self.X[-1], lam)

    @property
    def rank(self) -> int:
        return self.X[0].shape[1]

    @property
    def factors(self) -> FactorSet:
        return FactorSet(self.X, copy=False)

    def prox_for(self, mode: int, lam: float) -> ProxKind:
        if mode < self.N - 1:
            return ProxKind.sphere()
        return ProxKind.group_l0(lam) if self.regularized else ProxKind.none()

    # -- one outer iteration ---------------------------------------------
    def step(self) -> TraceRecord:
        cfg = self.cfg
        if self.regularized:
            self.lam = lambda_step(self.lam, cfg)
        lam = self.lam if self.regularized else 0.0
        w = next(self._weights)
        F_old = self.objective(lam)

        # extrapolated sweep: left blocks at the extrapolated points, right at anchors
        tilde = [None] * self.N
        new = [None] * self.N
        for i in range(self.N):
            blocks = tilde[:i] + [self.X[i]] + self.Xbar[i + 1:]
            new[i] = sub_bc_pgd(self.unfoldings[i], FactorSet(blocks, copy=False), i,
                                cfg.inner_iters, cfg.epsilon, self.prox_for(i, lam))
            tilde[i] = new[i] + w * (new[i] - self.Xbar[i])
        f_new = self._smooth(new)
        F_new = f_new + self._penalty(new[-1], lam)
        step_sq = sum(float(np.sum((a - b) ** 2)) for a, b in zip(new, self.X))

        safeguard = F_new > F_old - 0.5 * cfg.tau * step_sq
        if safeguard:
            # redo from the plain iterates
            new = [None] * self.N
            bar = [None] * self.N
            for i in range(self.N):
                blocks = new[:i] + [self.X[i]] + self.X[i + 1:]
                new[i] = sub_bc_pgd(self.unfoldings[i], FactorSet(blocks, copy=False), i,
                                    cfg.inner_iters, cfg.epsilon, self.prox_for(i, lam))
                bar[i] = new[i] + w * (new[i] - self.Xbar[i])
            f_new = self._smooth(new)
            F_new = f_new + self._penalty(new[-1], lam)
            step_sq = sum(float(np.sum((a - b) ** 2)) for a, b in zip(new, self.X))
        else:
            bar = tilde

        self.X, self.Xbar, self.f_curr = new, bar, f_new
        rel_err = math.sqrt(2.0 * max(f_new, 0.0)) / self.norm_x
        rec = TraceRecord(
            k=self.k, F=F_new, rel_err=rel_err, lam=lam, w=w,
            support_size=int(np.count_nonzero(np.any(new[-1] != 0, axis=0))),
            safeguard_used=bool(safeguard), F_prev=F_old, step_sq=step_sq,
            rank=self.rank, unit_dev=_unit_dev(new))
        if rec.descent_excess(cfg.tau) > DESCENT_SLACK * abs(F_old):
            logger.warning("sufficient decrease violated at k=%d (excess %.3e)",
                           self.k, rec.descent_excess(cfg.tau))
        self.trace.records.append(rec)

        objective_fixed = (not self.regularized) or self.lam <= cfg.lambda_min
        if (objective_fixed and self._prev_rel_err is not None
                and abs(self._prev_rel_err - rel_err) < cfg.stop_tol):
            self.converged = True
        self._prev_rel_err = rel_err
        self.k += 1
        return rec

    # -- rank reduction hook ---------------------------------------------
    def restrict(self, keep, drop_regularizer: bool = True):
        """Keep only the columns in `keep` of every iterate and anchor."""
        keep = np.asarray(sorted(keep), dtype=int)
        self.X = [a[:, keep].copy() for a in self.X]
        self.Xbar = [a[:, keep].copy() for a in self.Xbar]
        if drop_regularizer:
            self.regularized = False
        self.f_curr = self._smooth(self.X)

    def run(self, callback: Optional[Callable[["DoubleLoopSolver", TraceRecord], None]] = None):
        while self.k < self.cfg.max_outer and not self.converged:
            rec = self.step()
            if callback is not None:
                callback(self, rec)
        self.trace.status = "Converged" if self.converged else "MaxIters"
        return FactorSet([a.copy() for a in self.X], copy=False), self.trace


def outer_solve(t, cfg: SolverConfig, init: Optional[FactorSet] = None):
    """Fit the group-sparse CP model with the double-loop extrapolated solver.

    Returns
    -------
    fs : FactorSet
        Final factors; columns of all but the last factor have unit norm,
        zero columns of the last factor mark pruned components.
    trace : SolveTrace
    """
    return DoubleLoopSolver(t, cfg, init).run()
