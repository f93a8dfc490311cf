"""Proximal operators and matrix norms used by the ADMM solvers."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, NumericError

# Singular values below RANK_RTOL * sigma_max count as zero when reporting rank.
RANK_RTOL = 1e-12


class SvdFactors(NamedTuple):
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


def _check_alpha(alpha: float) -> None:
    if not alpha >= 0:
        raise InvalidArgumentError(f"threshold must be non-negative, got {alpha!r}")


def _check_finite(A: np.ndarray) -> None:
    if not np.all(np.isfinite(A)):
        raise NumericError("matrix has non-finite entries")


def soft_threshold(x: float, alpha: float) -> float:
    """Scalar shrinkage ``sign(x) * max(|x| - alpha, 0)``."""
    _check_alpha(alpha)
    return float(np.sign(x) * max(abs(x) - alpha, 0.0))


def soft_threshold_matrix(A, alpha: float) -> np.ndarray:
    """Elementwise soft-thresholding of an array; the shape is preserved."""
    _check_alpha(alpha)
    A = np.asarray(A, dtype=float)
    return np.sign(A) * np.maximum(np.abs(A) - alpha, 0.0)


def thin_svd(A) -> SvdFactors:
    """Economy SVD returning ``V`` (not ``V^T``) with orthonormal columns."""
    A = np.asarray(A, dtype=float)
    _check_finite(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    return SvdFactors(U, s, Vt.T)


def svt(A, alpha: float) -> np.ndarray:
    """Singular value thresholding.

    Returns the unique minimiser of ``alpha * ||X||_* + 0.5 * ||X - A||_F^2``,
    i.e. ``U diag(max(sigma - alpha, 0)) V^T``.
    """
    _check_alpha(alpha)
    U, s, V = thin_svd(A)
    s = np.maximum(s - alpha, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ V[:, keep].T


def svt_with_rank(A, alpha: float) -> tuple[np.ndarray, int, float]:
    """Like :func:`svt`, also returning the rank and nuclear norm of the result."""
    _check_alpha(alpha)
    U, s, V = thin_svd(A)
    s = np.maximum(s - alpha, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ V[:, keep].T, int(keep.sum()), float(s.sum())


def numerical_rank(A) -> int:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    s = thin_svd(A).sigma
    if s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def nuclear_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    _check_finite(A)
    if A.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def l1_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    _check_finite(A)
    return float(np.sum(np.abs(A)))


def fro_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    _check_finite(A)
    return float(np.linalg.norm(A))
