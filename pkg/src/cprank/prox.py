"""Proximal maps for the column blocks: unit-sphere projection and group hard thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ProxKind", "prox_unit_sphere", "prox_group_l0"]


def prox_unit_sphere(v) -> np.ndarray:
    """Project `v` onto the unit sphere.

    The zero vector has no unique projection; the first standard basis
    vector is returned so runs stay reproducible.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    nrm = np.linalg.norm(v)
    if nrm > 0:
        return v / nrm
    e = np.zeros_like(v)
    e.flat[0] = 1.0
    return e


def prox_group_l0(v, lam: float, step: float) -> np.ndarray:
    """Prox of ``step * lam * (||u|| != 0)``: keep `v` or zero it.

    The threshold is ``sqrt(2 * lam * step)``. A vector sitting exactly on
    the threshold is kept.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    v = np.asarray(v, dtype=np.float64)
    # compare squared quantities; avoids a sqrt on the hot path
    if v @ v < 2.0 * lam * step:
        return np.zeros_like(v)
    return v.copy()


@dataclass(frozen=True)
class ProxKind:
    """Which regularizer acts on the columns of a block.

    ``variant`` is one of ``"sphere"``, ``"group_l0"`` or ``"none"``.
    """

    variant: str
    lam: float = 0.0

    def __post_init__(self):
        if self.variant not in ("sphere", "group_l0", "none"):
            raise ValueError(f"unknown prox variant {self.variant!r}")
        if self.variant == "group_l0" and self.lam < 0:
            raise ValueError("lambda must be nonnegative")

    @classmethod
    def sphere(cls):
        return cls("sphere")

    @classmethod
    def group_l0(cls, lam: float):
        return cls("group_l0", float(lam))

    @classmethod
    def none(cls):
        return cls("none")

    def apply(self, v: np.ndarray, step: float) -> np.ndarray:
        if self.variant == "sphere":
            return prox_unit_sphere(v)
        if self.variant == "group_l0":
            return prox_group_l0(v, self.lam, step)
        return np.array(v, dtype=np.float64)

    def penalty(self, m: np.ndarray) -> float:
        """Value of the regularizer on a factor matrix (0 for the indicator on feasible points)."""
        if self.variant == "group_l0":
            return self.lam * int(np.count_nonzero(np.any(m != 0, axis=0)))
        return 0.0
