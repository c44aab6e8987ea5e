"""
Dense tensors, factor sets and the multilinear kernels shared by every solver.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Whenever a
tensor is flattened (unfolding, file payloads) the first index runs fastest,
i.e. Fortran order. With that convention the mode-``n`` unfolding satisfies

    unfold(reconstruct(fs), n) == fs[n] @ kr_complement(fs, n).T

where ``kr_complement`` takes the Khatri-Rao product of the remaining factors
in descending mode order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = [
    "FactorSet",
    "as_tensor",
    "unfold",
    "fold",
    "khatri_rao",
    "kr_complement",
    "gram_complement",
    "reconstruct",
    "objective_smooth",
    "column_gradient",
]


def as_tensor(x, min_ndim: int = 3) -> np.ndarray:
    """Validate `x` as a dense real tensor and return it as float64."""
    t = np.asarray(x, dtype=np.float64)
    if t.ndim < min_ndim:
        raise ValueError(f"expected a tensor with at least {min_ndim} modes, got ndim={t.ndim}")
    if t.size == 0:
        raise ValueError("tensor has an empty mode")
    return t


def _check_mode(ndim: int, mode: int) -> int:
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < ndim:
        raise ValueError(f"invalid mode {mode!r} for a {ndim}-way tensor")
    return int(mode)


class FactorSet:
    """An ordered list of factor matrices sharing a column count.

    Parameters
    ----------
    factors : sequence of (n_i, R) array_like
        One matrix per mode. Column ``r`` of ``factors[i]`` is the mode-``i``
        vector of the ``r``-th rank-one term.
    copy : bool
        Copy the input matrices (default). The solvers pass ``copy=False``
        for arrays they already own.
    """

    def __init__(self, factors: Sequence, copy: bool = True):
        mats = []
        for f in factors:
            a = np.array(f, dtype=np.float64, copy=copy)
            if a.ndim != 2:
                raise ValueError("factor matrices must be 2-dimensional")
            mats.append(a)
        if len(mats) < 2:
            raise ValueError("a factor set needs at least two factor matrices")
        ranks = {a.shape[1] for a in mats}
        if len(ranks) != 1:
            raise ValueError(f"factor matrices disagree on the rank: {sorted(ranks)}")
        if any(a.shape[0] < 1 for a in mats):
            raise ValueError("factor matrices need at least one row")
        self.factors = mats

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def shape(self) -> tuple:
        return tuple(a.shape[0] for a in self.factors)

    def __len__(self):
        return len(self.factors)

    def __getitem__(self, i):
        return self.factors[i]

    def __iter__(self):
        return iter(self.factors)

    def copy(self) -> "FactorSet":
        return FactorSet([a.copy() for a in self.factors], copy=False)

    def norm_sq(self) -> float:
        return float(sum(np.sum(a * a) for a in self.factors))

    def __repr__(self):
        return f"FactorSet(shape={self.shape}, rank={self.rank})"


def check_bound(t: np.ndarray, fs: FactorSet):
    if t.shape != fs.shape:
        raise ValueError(f"factor shapes {fs.shape} do not match tensor shape {t.shape}")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-`mode` unfolding (0-based mode) with the first remaining index fastest."""
    mode = _check_mode(t.ndim, mode)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(s) for s in shape)
    mode = _check_mode(len(shape), mode)
    rest = shape[:mode] + shape[mode + 1:]
    full = np.reshape(m, (shape[mode],) + rest, order="F")
    return np.moveaxis(full, 0, mode)


def khatri_rao(matrices: Sequence[np.ndarray]) -> np.ndarray:
    """Columnwise Kronecker product ``M_0 ⊙ M_1 ⊙ ... ⊙ M_k``.

    The row index of the last matrix varies fastest, as in ``np.kron``.
    """
    matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not matrices:
        raise ValueError("khatri_rao needs at least one matrix")
    r = matrices[0].shape[1]
    if any(m.shape[1] != r for m in matrices):
        raise ValueError("all matrices need the same number of columns")
    out = matrices[0]
    for m in matrices[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, r)
    return out


def kr_complement(fs: FactorSet, mode: int) -> np.ndarray:
    """Khatri-Rao product of every factor except `mode`, in descending mode order."""
    mode = _check_mode(fs.ndim, mode)
    others = [fs[p] for p in reversed(range(fs.ndim)) if p != mode]
    return khatri_rao(others)


def gram_complement(fs: FactorSet, mode: int) -> np.ndarray:
    """``D.T @ D`` for ``D = kr_complement(fs, mode)``, via the Hadamard product of Grams."""
    mode = _check_mode(fs.ndim, mode)
    g = np.ones((fs.rank, fs.rank))
    for p in range(fs.ndim):
        if p != mode:
            g *= fs[p].T @ fs[p]
    return g


def reconstruct(fs: FactorSet) -> np.ndarray:
    """Full tensor ``sum_r a_r^(1) o ... o a_r^(N)``."""
    flat = fs[0] @ kr_complement(fs, 0).T
    return fold(flat, 0, fs.shape)


def objective_smooth(t: np.ndarray, fs: FactorSet) -> float:
    """Half the squared Frobenius norm of ``t - reconstruct(fs)``."""
    check_bound(t, fs)
    r = t - reconstruct(fs)
    return 0.5 * float(np.vdot(r, r))


def column_gradient(x_unf: np.ndarray, fs: FactorSet, mode: int, col: int,
                    D: np.ndarray | None = None):
    """Gradient of the smooth term with respect to one factor column.

    Parameters
    ----------
    x_unf : ndarray
        Mode-`mode` unfolding of the data tensor.
    fs : FactorSet
    mode, col : int
        Block (0-based mode) and column index.
    D : ndarray, optional
        ``kr_complement(fs, mode)``; computed when omitted.

    Returns
    -------
    grad : ndarray of shape (n_mode,)
        ``A (D^T D)[:, col] - X_(mode) d_col``.
    lipschitz : float
        ``d_col^T d_col``.
    """
    mode = _check_mode(fs.ndim, mode)
    if not 0 <= col < fs.rank:
        raise ValueError(f"invalid column {col} for rank {fs.rank}")
    if D is None:
        D = kr_complement(fs, mode)
    d = D[:, col]
    grad = fs[mode] @ (D.T @ d) - x_unf @ d
    return grad, float(d @ d)
