"""Orthogonal Procrustes reduction of the multiplicative editing objective.

The edit objective

    lam * ||R W K0 - W K0||_F^2 + ||R W KE - VE||_F^2,    R in O(d)

is the same as ``||R A - B||_F^2`` with the column blocks

    A = [sqrt(lam) W K0 | W KE],    B = [sqrt(lam) W K0 | VE],

whose minimiser over the orthogonal group is ``R = U V^T`` where
``B A^T = U S V^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, DomainError
from .linalg import OrthogonalMatrix, as_matrix, rank_threshold, svd

__all__ = ["EditConfig", "ProcrustesProblem", "assemble", "objective", "residual", "solve"]


@dataclass(frozen=True)
class EditConfig:
    """Per-step editing parameters.

    ``lam`` weighs preservation of the ``K0`` outputs against fitting the
    edits; ``rank_tol`` is forwarded to pseudoinverse calls (0 selects the
    default numerical-rank rule).
    """

    lam: float = 1.0
    rank_tol: float = 0.0

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"lam must be a positive finite number, got {self.lam}")
        if not self.rank_tol >= 0:
            raise DomainError(f"rank_tol must be >= 0, got {self.rank_tol}")


@dataclass(frozen=True, eq=False)
class ProcrustesProblem:
    """Stacked source ``a`` and target ``b`` blocks, both ``d x (n0 + nE)``.

    The first ``n_preserve`` columns form the (``sqrt(lam)``-scaled)
    preservation block.
    """

    a: NDArray[np.float64]
    b: NDArray[np.float64]
    n_preserve: int = 0
    lam: float = 1.0

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        b = as_matrix(self.b, "b")
        if a.shape != b.shape:
            raise DimensionError(f"a and b differ in shape: {a.shape} vs {b.shape}")
        if not 0 <= self.n_preserve <= a.shape[1]:
            raise DimensionError(f"n_preserve={self.n_preserve} out of range for {a.shape[1]} columns")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.a.shape[0]


def assemble(
    w: ArrayLike,
    k0: ArrayLike,
    ke: ArrayLike,
    ve: ArrayLike,
    cfg: EditConfig = EditConfig(),
) -> ProcrustesProblem:
    """Build the Procrustes blocks for one editing step.

    Parameters
    ----------
    w : (d, p) array
        Matrix the rotation is applied to.
    k0 : (p, n0) array
        Keys whose outputs should be preserved; ``n0`` may be 0.
    ke : (p, nE) array
        Keys being edited, ``nE >= 1``.
    ve : (d, nE) array
        Target outputs for ``ke``.
    """
    w = as_matrix(w, "w")
    k0 = as_matrix(k0, "k0")
    ke = as_matrix(ke, "ke")
    ve = as_matrix(ve, "ve")
    d, p = w.shape
    if k0.shape[0] != p:
        raise DimensionError(f"k0 has {k0.shape[0]} rows, expected p={p} to match w {w.shape}")
    if ke.shape[0] != p:
        raise DimensionError(f"ke has {ke.shape[0]} rows, expected p={p} to match w {w.shape}")
    if ke.shape[1] < 1:
        raise DimensionError("ke must hold at least one edit column")
    if ve.shape != (d, ke.shape[1]):
        raise DimensionError(f"ve has shape {ve.shape}, expected {(d, ke.shape[1])}")
    kept = math.sqrt(cfg.lam) * (w @ k0)
    a = np.hstack([kept, w @ ke])
    b = np.hstack([kept, ve])
    return ProcrustesProblem(a, b, n_preserve=k0.shape[1], lam=cfg.lam)


def solve(prob: ProcrustesProblem, rank_tol: float = 0.0) -> OrthogonalMatrix:
    """Closed-form minimiser of ``||R a - b||_F`` over all orthogonal ``R``.

    No determinant correction is applied, so reflections are admissible.
    When ``b a^T`` has numerical rank ``r < d`` the minimiser is only fixed on
    an ``r``-dimensional subspace; on the complement we pick the orthogonal
    map closest to the identity, so an edit that asks for no change returns
    ``R = I`` even when ``a`` is rank deficient.
    """
    res = svd(prob.b @ prob.a.T)
    s = res.singular_values
    r = int(np.count_nonzero(s > rank_threshold(s, (prob.dim, prob.dim), rank_tol))) if s[0] > 0 else 0
    u, v = res.u, res.v_t.T
    if r == prob.dim:
        return OrthogonalMatrix(u @ v.T)
    qu, qv = u[:, r:], v[:, r:]
    # maximise tr(qu Z qv^T) over orthogonal Z
    inner = svd(qv.T @ qu)
    z = inner.v_t.T @ inner.u.T
    return OrthogonalMatrix(u[:, :r] @ v[:, :r].T + qu @ z @ qv.T)


def objective(prob: ProcrustesProblem, r: ArrayLike) -> float:
    """``||R a - b||_F^2``."""
    r = np.asarray(r, dtype=np.float64)
    return float(np.sum(np.square(r @ prob.a - prob.b)))


def residual(prob: ProcrustesProblem, r: ArrayLike) -> tuple[float, float]:
    """Unweighted ``(preserve_err, edit_err)`` of a candidate rotation.

    ``lam * preserve_err**2 + edit_err**2`` equals :func:`objective`.
    """
    r = np.asarray(r, dtype=np.float64)
    n0 = prob.n_preserve
    diff = r @ prob.a - prob.b
    preserve = float(np.linalg.norm(diff[:, :n0])) / math.sqrt(prob.lam) if n0 else 0.0
    edit = float(np.linalg.norm(diff[:, n0:]))
    return preserve, edit
