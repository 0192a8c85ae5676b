"""Dense SPD linear algebra: factorization, solves, log-determinants.

Matrices are plain float64 numpy arrays (row-major). Factorization is
delegated to LAPACK via numpy/scipy; this module adds the contracts the
rest of the package relies on: symmetry checking, a pivot floor that
separates genuine indefiniteness from underflow, and typed errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from d2g.errors import DimensionMismatch, NotPositiveDefinite

# pivots at or below this are treated as numerically non-positive
PIVOT_FLOOR = 1e-300


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T reconstructing the input."""

    lower: np.ndarray
    dim: int


def cholesky(a: np.ndarray) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix.

    Raises NotPositiveDefinite when a pivot falls at or below 1e-300,
    which signals a degenerate precision or covariance rather than an
    underflow artifact.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise DimensionMismatch("matrix is not symmetric to 1e-10 relative tolerance")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    # LAPACK succeeded; enforce the pivot floor (pivot = L_kk^2)
    d = np.diagonal(lower)
    if a.size and np.min(d * d) <= PIVOT_FLOOR:
        raise NotPositiveDefinite("pivot at or below 1e-300")
    return CholeskyFactor(lower=lower, dim=a.shape[0])


def solve_psd(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b given the Cholesky factor of a."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.dim:
        raise DimensionMismatch(
            f"rhs has leading dimension {b.shape[0]}, factor is {factor.dim}"
        )
    return cho_solve((factor.lower, True), b)


def solve_lower(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve L @ x = b (triangular half-solve)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.dim:
        raise DimensionMismatch(
            f"rhs has leading dimension {b.shape[0]}, factor is {factor.dim}"
        )
    return solve_triangular(factor.lower, b, lower=True)


def logdet_psd(factor: CholeskyFactor) -> float:
    """log det(a) = 2 * sum(log diag(L))."""
    return float(2.0 * np.sum(np.log(np.diagonal(factor.lower))))


def inverse_psd(factor: CholeskyFactor) -> np.ndarray:
    """Dense inverse via one SPD solve against the identity."""
    return solve_psd(factor, np.eye(factor.dim))
