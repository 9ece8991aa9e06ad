"""Dense real-matrix primitives.

Everything here works on 2-D ``float64`` arrays and is a pure function of its
inputs.  Singular value decompositions are computed by LAPACK (through
:func:`numpy.linalg.svd`) and then put in a canonical sign convention so that
every downstream quantity is byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, DomainError, NumericalError

__all__ = [
    "ORTHO_TOL",
    "OrthogonalMatrix",
    "SvdResult",
    "as_matrix",
    "condition_number",
    "frobenius_norm",
    "nearest_orthogonal",
    "orthogonality_error",
    "pca_project",
    "pseudo_inverse",
    "random_orthogonal",
    "rank_threshold",
    "spectral_norm",
    "svd",
]

ORTHO_TOL = 1e-10

Seed = Union[int, Sequence[int]]


def as_matrix(m: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    """Coerce ``m`` to a finite 2-D float64 array.

    Zero-sized dimensions are allowed (an empty preservation block is a
    ``p x 0`` matrix); NaN and infinity are not.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains non-finite entries")
    return a


class SvdResult(NamedTuple):
    """Thin SVD ``m = u @ diag(singular_values) @ v_t``."""

    u: NDArray[np.float64]
    singular_values: NDArray[np.float64]
    v_t: NDArray[np.float64]

    def reconstruct(self) -> NDArray[np.float64]:
        return (self.u * self.singular_values) @ self.v_t


def svd(m: ArrayLike) -> SvdResult:
    """Thin singular value decomposition with a deterministic sign convention.

    Within each left singular vector the entry of largest magnitude (first
    index on ties) is made non-negative; the matching row of ``v_t`` is
    negated along with it.

    Raises
    ------
    NumericalError
        If LAPACK fails to converge.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise DimensionError(f"svd of an empty {a.shape[0]}x{a.shape[1]} matrix")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s)) and np.all(np.isfinite(vt))):
        raise NumericalError("SVD produced non-finite factors")
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivot, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return SvdResult(u * signs, s, vt * signs[:, None])


def frobenius_norm(m: ArrayLike) -> float:
    return float(np.sqrt(np.sum(np.square(as_matrix(m)))))


def spectral_norm(m: ArrayLike) -> float:
    a = as_matrix(m)
    if a.size == 0:
        return 0.0
    return float(svd(a).singular_values[0])


def rank_threshold(singular_values: NDArray[np.float64], shape: tuple, rank_tol: float = 0.0) -> float:
    """Cut-off below which a singular value counts as zero.

    ``rank_tol == 0`` selects the standard numerical-rank rule
    ``eps * max(shape) * sigma_max``; a positive ``rank_tol`` is read as a
    relative tolerance, ``rank_tol * sigma_max``.
    """
    if rank_tol < 0:
        raise DomainError(f"rank_tol must be >= 0, got {rank_tol}")
    smax = float(singular_values[0]) if singular_values.size else 0.0
    if rank_tol == 0:
        return np.finfo(np.float64).eps * max(shape) * smax
    return rank_tol * smax


def pseudo_inverse(m: ArrayLike, rank_tol: float = 0.0) -> NDArray[np.float64]:
    """Moore-Penrose pseudoinverse ``V diag(1/s) U^T`` over singular values above threshold.

    A rank-0 (or empty) input yields the zero matrix of transposed shape.
    """
    a = as_matrix(m)
    if a.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    u, s, vt = svd(a)
    cut = rank_threshold(s, a.shape, rank_tol)
    keep = s > cut
    if not np.any(keep):
        return np.zeros((a.shape[1], a.shape[0]))
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def condition_number(m: ArrayLike, rank_tol: float = 0.0) -> float:
    """2-norm condition number ``||W||_2 * ||W^+||_2``.

    Computed as ``sigma_max / sigma_min`` where ``sigma_min`` is the smallest
    singular value above the rank threshold, so rank-deficient matrices get a
    finite value.

    Raises
    ------
    DomainError
        For the zero (or empty) matrix.
    """
    a = as_matrix(m)
    if a.size == 0:
        raise DomainError("condition number of an empty matrix")
    s = svd(a).singular_values
    if s[0] == 0.0:
        raise DomainError("condition number of the zero matrix")
    kept = s[s > rank_threshold(s, a.shape, rank_tol)]
    smin = kept[-1]
    if smin == 0.0:
        return float("inf")
    return float(s[0] / smin)


@dataclass(frozen=True, eq=False)
class OrthogonalMatrix:
    """Square matrix ``R`` with ``R^T R = R R^T = I`` to within :data:`ORTHO_TOL`."""

    matrix: NDArray[np.float64]

    def __post_init__(self):
        r = as_matrix(self.matrix, "orthogonal matrix")
        if r.shape[0] != r.shape[1] or r.shape[0] == 0:
            raise DimensionError(f"orthogonal matrix must be square and nonempty, got {r.shape}")
        err = orthogonality_error(r)
        if not err < ORTHO_TOL:
            raise NumericalError(f"matrix is not orthogonal: max|R^T R - I| = {err:.3e}")
        r = r.copy()
        r.flags.writeable = False
        object.__setattr__(self, "matrix", r)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def T(self) -> "OrthogonalMatrix":
        return OrthogonalMatrix(self.matrix.T)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    def __matmul__(self, other):
        if isinstance(other, OrthogonalMatrix):
            return self.matrix @ other.matrix
        return self.matrix @ np.asarray(other)

    def __rmatmul__(self, other):
        return np.asarray(other) @ self.matrix


def orthogonality_error(r: ArrayLike) -> float:
    """``max(max|R^T R - I|, max|R R^T - I|)``."""
    r = np.asarray(r, dtype=np.float64)
    eye = np.eye(r.shape[0])
    return float(max(np.max(np.abs(r.T @ r - eye)), np.max(np.abs(r @ r.T - eye))))


def random_orthogonal(dim: int, seed: Seed) -> OrthogonalMatrix:
    """Haar-distributed orthogonal matrix.

    QR of a standard Gaussian matrix with each column of ``Q`` multiplied by
    the sign of the matching diagonal entry of ``R``; without that correction
    the distribution is not uniform on O(dim).
    """
    if dim < 1:
        raise DomainError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return OrthogonalMatrix(q * signs)


def nearest_orthogonal(m: ArrayLike) -> NDArray[np.float64]:
    """Orthogonal polar factor ``U V^T`` of a square matrix."""
    u, _, vt = svd(m)
    return u @ vt


def pca_project(columns: ArrayLike, k: int) -> NDArray[np.float64]:
    """Coordinates of each column in the top-``k`` principal directions.

    Parameters
    ----------
    columns : (n_features, n_samples) array
        One sample per column.
    k : int
        Number of components, ``1 <= k <= min(n_features, n_samples)``.

    Returns
    -------
    (k, n_samples) ndarray
        Components beyond the numerical rank of the centred data are returned
        as exact zeros.
    """
    x = as_matrix(columns, "columns")
    rows, cols = x.shape
    if cols < 2:
        raise DimensionError(f"pca_project needs at least 2 columns, got {cols}")
    if not 1 <= k <= min(rows, cols):
        raise DomainError(f"k must lie in [1, {min(rows, cols)}], got {k}")
    centred = x - x.mean(axis=1, keepdims=True)
    if not np.any(centred):
        return np.zeros((k, cols))
    u, s, _ = svd(centred)
    coords = u[:, :k].T @ centred
    dead = s[:k] <= rank_threshold(s, centred.shape)
    coords[dead] = 0.0
    return coords
