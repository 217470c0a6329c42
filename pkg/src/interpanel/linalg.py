"""Dense least-squares kernels and projection matrices.

Everything in this module is a pure function of its inputs. Solvers go
through orthogonal decompositions (SVD/QR), never explicit normal
equations, because the rank conditions we can check only bound the Gram
determinant away from zero, not its conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# A design counts as rank deficient when its smallest singular value falls
# below RANK_TOL times the largest.
RANK_TOL = 1e-10


class RankDeficient(np.linalg.LinAlgError):
    """Raised when a design or Gram matrix is numerically singular."""

    def __init__(self, message, condition=np.inf, unit=None):
        self.condition = float(condition)
        self.unit = unit
        if unit is not None:
            message = f"{message} (unit {unit})"
        super().__init__(message)


@dataclass(frozen=True)
class LeastSquaresFit:
    """Solution of a least-squares problem.

    Attributes
    ----------
    coefficients : (k,) ndarray
        Minimizer of ||design @ b - response||^2.
    residuals : (m,) ndarray
        response - design @ coefficients.
    gram_condition : float
        Condition number estimate of the Gram matrix (squared singular
        value ratio); 1.0 for an empty design.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    gram_condition: float


def solve_ols(design, response):
    """Solve an ordinary least-squares problem via SVD.

    Parameters
    ----------
    design : (m, k) array_like
        Design matrix with m >= k.
    response : (m,) array_like

    Returns
    -------
    LeastSquaresFit

    Raises
    ------
    RankDeficient
        If the smallest singular value of the design is below RANK_TOL
        times the largest.
    """
    A = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).reshape(-1)
    if A.ndim != 2:
        raise ValueError("design must be 2-dimensional")
    m, k = A.shape
    if y.shape[0] != m:
        raise ValueError(f"response length {y.shape[0]} != design rows {m}")
    if m < k:
        raise ValueError(f"underdetermined system: {m} rows < {k} columns")
    if k == 0:
        return LeastSquaresFit(np.zeros(0), y.copy(), 1.0)

    coef, _, rank, sv = np.linalg.lstsq(A, y, rcond=None)
    if sv[0] == 0.0 or sv[-1] < RANK_TOL * sv[0] or rank < k:
        cond = np.inf if sv[-1] == 0.0 else (sv[0] / sv[-1]) ** 2
        raise RankDeficient(
            f"design is numerically rank deficient (gram condition ~ {cond:.3e})",
            condition=cond,
        )
    return LeastSquaresFit(coef, y - A @ coef, float((sv[0] / sv[-1]) ** 2))


def residual_maker(A):
    """Projection matrix onto the orthogonal complement of col(A).

    Returns M = I - A (A'A)^{-1} A', a symmetric idempotent T x T matrix
    with M @ A = 0. An empty A (zero columns) yields the identity.

    Raises
    ------
    RankDeficient
        If A'A is numerically singular.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be 2-dimensional")
    T, k = A.shape
    if k == 0:
        return np.eye(T)
    if T < k:
        raise RankDeficient(f"more columns ({k}) than rows ({T})", unit=None)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] < RANK_TOL * sv[0]:
        cond = np.inf if sv[-1] == 0.0 else (sv[0] / sv[-1]) ** 2
        raise RankDeficient("A'A is numerically singular", condition=cond)
    Q, _ = np.linalg.qr(A)
    M = np.eye(T) - Q @ Q.T
    return 0.5 * (M + M.T)


def residual_makers(X):
    """Batched residual makers for a stack of unit design matrices.

    Parameters
    ----------
    X : (n, T, k) ndarray
        One T x k design per unit. k may be 0.

    Returns
    -------
    (n, T, T) ndarray of projection matrices.

    Raises
    ------
    RankDeficient
        Carrying the index of the first offending unit.
    """
    X = np.asarray(X, dtype=float)
    n, T, k = X.shape
    if k == 0:
        return np.broadcast_to(np.eye(T), (n, T, T)).copy()
    if T < k:
        raise RankDeficient(f"unit designs have more columns ({k}) than rows ({T})")
    sv = np.linalg.svd(X, compute_uv=False)
    bad = (sv[:, 0] == 0.0) | (sv[:, -1] < RANK_TOL * sv[:, 0])
    if np.any(bad):
        i = int(np.argmax(bad))
        s = sv[i]
        cond = np.inf if s[-1] == 0.0 else (s[0] / s[-1]) ** 2
        raise RankDeficient("X_i'X_i is numerically singular", condition=cond, unit=i)
    Q, _ = np.linalg.qr(X)
    M = np.eye(T) - np.einsum("nik,njk->nij", Q, Q)
    return 0.5 * (M + M.transpose(0, 2, 1))


def gram_det(A):
    """Determinant of the Gram matrix A'A (1.0 for an empty A)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be 2-dimensional")
    return float(np.linalg.det(A.T @ A))
