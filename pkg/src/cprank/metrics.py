"""Fit metrics, component matching and the alternating least squares baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .tensor import FactorSet, as_tensor, check_bound, kr_complement, reconstruct, unfold

__all__ = ["rel_err", "AlignmentResult", "align_components", "rmsep", "cp_als"]

logger = logging.getLogger(__name__)

# pairs below this signature cosine are not counted as the same component
MATCH_COSINE = 0.9


def rel_err(t, fs: FactorSet) -> float:
    """``||t - [[fs]]|| / ||t||``.

    Raises
    ------
    ZeroDivisionError
        If `t` is the zero tensor.
    """
    t = np.asarray(t, dtype=np.float64)
    nrm = float(np.linalg.norm(t))
    if nrm == 0:
        raise ZeroDivisionError("relative error is undefined for the zero tensor")
    if fs.rank == 0:
        return 1.0
    check_bound(t, fs)
    return float(np.linalg.norm(t - reconstruct(fs))) / nrm


@dataclass
class AlignmentResult:
    """Matching of estimated components to reference components.

    ``permutation[r]`` is the estimated column assigned to reference column
    ``r`` (``-1`` when unmatched). ``scales[r]`` is the least-squares factor
    mapping that estimated last-mode column onto the reference one.
    """

    permutation: np.ndarray
    scales: np.ndarray
    matched_rank: int
    cosines: np.ndarray
    pairs: List[tuple] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.matched_rank == len(self.permutation)

    def regressed(self, estimated: FactorSet) -> np.ndarray:
        """Last-mode columns of the matched components, rescaled; unmatched columns are NaN."""
        last = estimated[estimated.ndim - 1]
        out = np.full((last.shape[0], len(self.permutation)), np.nan)
        for r, j in enumerate(self.permutation):
            if j >= 0:
                out[:, r] = self.scales[r] * last[:, j]
        return out


def _signature_cosines(est: FactorSet, ref: FactorSet) -> np.ndarray:
    # cosine of Kronecker products is the product of the per-mode cosines
    cos = np.ones((est.rank, ref.rank))
    for p in range(est.ndim - 1):
        a, b = est[p], ref[p]
        na = np.linalg.norm(a, axis=0)
        nb = np.linalg.norm(b, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = (a.T @ b) / np.outer(na, nb)
        cos *= np.nan_to_num(c)
    return np.abs(cos)


def align_components(estimated: FactorSet, reference: FactorSet,
                     min_cosine: float = MATCH_COSINE) -> AlignmentResult:
    """Greedy matching on the joint signature of all modes but the last.

    Only estimated components with a nonzero last-mode column take part.
    Pairs are taken in order of decreasing absolute cosine, without reuse,
    down to `min_cosine`.
    """
    if estimated.ndim != reference.ndim:
        raise ValueError("factor sets have a different number of modes")
    if estimated.shape != reference.shape:
        raise ValueError(f"shape mismatch: {estimated.shape} vs {reference.shape}")
    R = reference.rank
    perm = np.full(R, -1, dtype=int)
    scales = np.full(R, np.nan)
    cosines = np.zeros(R)
    pairs = []
    if estimated.rank == 0 or R == 0:
        return AlignmentResult(perm, scales, 0, cosines, pairs)

    last = estimated.ndim - 1
    alive = np.any(estimated[last] != 0, axis=0)
    cos = _signature_cosines(estimated, reference)
    cos[~alive, :] = -1.0

    used_est = set()
    order = np.argsort(-cos, axis=None, kind="stable")
    for flat in order:
        j, r = divmod(int(flat), R)
        c = cos[j, r]
        if c < min_cosine:
            break
        if j in used_est or perm[r] >= 0:
            continue
        e = estimated[last][:, j]
        perm[r] = j
        scales[r] = float(e @ reference[last][:, r]) / float(e @ e)
        cosines[r] = c
        used_est.add(j)
        pairs.append((j, r))
    return AlignmentResult(perm, scales, len(pairs), cosines, pairs)


def rmsep(reference_conc, regressed_conc) -> float:
    """Root mean squared difference between two equally shaped matrices."""
    a = np.asarray(reference_conc, dtype=np.float64)
    b = np.asarray(regressed_conc, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty matrices")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def cp_als(t, rank: int, max_iters: int = 500, tol: float = 1e-10, seed: int = 0,
           init: Optional[FactorSet] = None, return_errors: bool = False):
    """Plain CP alternating least squares.

    Each sweep sets ``A_i <- X_(i) D (D^T D)^+`` for every mode in turn. The
    Gram pseudoinverse uses a relative cutoff of 1e-12, so overestimated
    ranks (rank-deficient Grams) do not blow up.

    Parameters
    ----------
    t : ndarray
    rank : int
    max_iters : int
        Maximum number of sweeps.
    tol : float
        Stop when the relative error changes by less than this between sweeps.
    seed : int
        Seed of the standard normal initialization (ignored with `init`).
    init : FactorSet, optional
    return_errors : bool
        Also return the relative error after each sweep.

    Returns
    -------
    FactorSet, or (FactorSet, list of float) with `return_errors`.
    """
    t = as_tensor(t)
    if int(rank) != rank or rank < 1:
        raise ValueError("rank must be a positive integer")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    nrm = float(np.linalg.norm(t)) or 1.0
    if init is None:
        rng = np.random.default_rng(seed)
        init = FactorSet([rng.standard_normal((n, int(rank))) for n in t.shape], copy=False)
    else:
        init = init.copy()
        check_bound(t, init)
    fs = init
    unf = [unfold(t, i) for i in range(t.ndim)]

    errors = []
    prev = None
    for _ in range(max_iters):
        for i in range(t.ndim):
            D = kr_complement(fs, i)
            G = D.T @ D
            fs.factors[i] = (unf[i] @ D) @ np.linalg.pinv(G, rcond=1e-12, hermitian=True)
        err = float(np.linalg.norm(t - reconstruct(fs))) / nrm
        errors.append(err)
        if prev is not None and abs(prev - err) < tol:
            break
        prev = err
    if return_errors:
        return fs, errors
    return fs
