"""Dense matrix helpers used throughout the package.

All functions accept anything ``numpy.asarray`` understands and reject
non-finite entries. ``pinv`` also accepts stacks of matrices (leading batch
axes), which the Monte-Carlo path relies on.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

DEFAULT_TOL = 1e-10


def as_matrix(m, name: str = "matrix", *, square: bool = False) -> np.ndarray:
    """Coerce ``m`` to a finite 2-D float array.

    Scalars become 1x1 and vectors become a single row.
    """
    try:
        arr = np.array(m, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name}: not a numeric array ({exc})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise InvalidInputError(f"{name}: expected a matrix, got {arr.ndim}-d array")
    if arr.size == 0:
        raise InvalidInputError(f"{name}: empty matrix")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains NaN or Inf")
    if square and arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"{name}: expected square matrix, got shape {arr.shape}")
    return arr


def _check_finite(m, name):
    arr = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: contains NaN or Inf")
    return arr


def pinv(m, tol: float = DEFAULT_TOL, *, hermitian: bool = False) -> np.ndarray:
    """Moore-Penrose pseudo-inverse.

    Singular values at or below ``tol`` times the largest singular value are
    treated as zero. With ``hermitian=True`` the input is assumed symmetric and
    an eigendecomposition is used, which is noticeably faster for the stacked
    covariance matrices the simulator feeds in.
    """
    arr = _check_finite(m, "pinv input")
    if arr.ndim < 2:
        arr = as_matrix(arr, "pinv input")
    return np.linalg.pinv(arr, rcond=tol, hermitian=hermitian)


def expm(m) -> np.ndarray:
    arr = as_matrix(m, "expm input", square=True)
    return scipy.linalg.expm(arr)


def spectral_radius(m) -> float:
    arr = as_matrix(m, "spectral_radius input", square=True)
    return float(np.max(np.abs(np.linalg.eigvals(arr))))


def rank_tol(m, tol: float = DEFAULT_TOL) -> int:
    """Number of singular values strictly above ``tol * s_max``."""
    arr = as_matrix(m, "rank_tol input")
    s = np.linalg.svd(arr, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def is_symmetric(m: np.ndarray, atol: float = 1e-8) -> bool:
    scale = max(1.0, float(np.max(np.abs(m))))
    return bool(np.allclose(m, m.T, rtol=0.0, atol=atol * scale))


def min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (tiny negative eigenvalues clipped)."""
    w, U = np.linalg.eigh(symmetrize(m))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def block_diag(*blocks) -> np.ndarray:
    return scipy.linalg.block_diag(*blocks)
