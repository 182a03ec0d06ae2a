"""Analytic gradient-weight matrix for the unrolled network.

The learned-ISTA style update x = y - mu * W^T (A y - b) keeps a single
layer-independent W chosen to minimize ||W^T A||_F^2 subject to w_m^T a_m = 1
per column.  The objective separates per column, so each column has the
closed form w_m = G^{-1} a_m / (a_m^T G^{-1} a_m) with G = A A^T (plus a
small ridge for ill-conditioned operators).
"""

import dataclasses

import numpy as np

from .errors import ConditioningError, ShapeError


@dataclasses.dataclass
class WeightSolveReport:
    W: np.ndarray
    constraint_residuals: np.ndarray
    objective: float
    kkt_residual: float
    ridge_eps: float


def solve_analytic_W(A, ridge_eps=None):
    """Per-column closed-form solve; returns the matrix plus residuals.

    ridge_eps=None picks 1e-8 * trace(AA^T)/N.  ridge_eps=0 requires AA^T to
    be positive definite and raises ConditioningError otherwise.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ShapeError("A must be 2-D, got %r" % (A.shape,))
    n, m = A.shape
    col_norms = np.linalg.norm(A, axis=0)
    if np.any(col_norms == 0.0):
        raise ConditioningError(
            "A has a zero column (index %d)" % int(np.argmin(col_norms))
        )
    G = A @ A.T
    if ridge_eps is None:
        ridge_eps = 1e-8 * float(np.trace(G)) / n
    if ridge_eps < 0:
        raise ValueError("ridge_eps must be >= 0")
    G = G + ridge_eps * np.eye(n)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise ConditioningError(
            "A A^T + ridge is not positive definite (rank-deficient rows; "
            "increase ridge_eps)"
        )
    # G^{-1} A via the Cholesky factor, all columns at once
    X = np.linalg.solve(L.T, np.linalg.solve(L, A))
    denom = np.sum(A * X, axis=0)
    if np.any(denom <= 0.0):
        raise ConditioningError("degenerate column in the constraint solve")
    W = X / denom[None, :]
    constraint = np.abs(np.sum(W * A, axis=0) - 1.0)
    objective = float(np.sum((W.T @ A) ** 2))
    nu = 2.0 / denom
    kkt = float(np.max(np.linalg.norm(2.0 * (G @ W) - nu[None, :] * A, axis=0)))
    return WeightSolveReport(
        W=W,
        constraint_residuals=constraint,
        objective=objective,
        kkt_residual=kkt,
        ridge_eps=float(ridge_eps),
    )


def check_lista_condition(W1, W2, A):
    """Frobenius distance of W2 from I - W1 A (0 for our construction)."""
    W1 = np.asarray(W1, dtype=np.float64)
    W2 = np.asarray(W2, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if W1.ndim != 2 or W2.ndim != 2 or A.ndim != 2:
        raise ShapeError("all arguments must be 2-D")
    if W1.shape[1] != A.shape[0]:
        raise ShapeError(
            "W1 %r and A %r are not conformable" % (W1.shape, A.shape)
        )
    prod = W1 @ A
    if prod.shape[0] != prod.shape[1]:
        raise ShapeError("W1 A must be square, got %r" % (prod.shape,))
    if W2.shape != prod.shape:
        raise ShapeError(
            "W2 shape %r does not match W1 A shape %r" % (W2.shape, prod.shape)
        )
    return float(np.linalg.norm(W2 - (np.eye(prod.shape[0]) - prod)))


def coherence_report(W, A):
    """Worst normalized cross-correlation max_{m != n} |w_m^T a_n|."""
    W = np.asarray(W, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if W.shape != A.shape:
        raise ShapeError("W %r and A %r must share a shape" % (W.shape, A.shape))
    wn = np.linalg.norm(W, axis=0)
    an = np.linalg.norm(A, axis=0)
    if np.any(wn == 0.0) or np.any(an == 0.0):
        raise ConditioningError("zero column in coherence computation")
    m = W.shape[1]
    if m < 2:
        return 0.0
    C = np.abs(W.T @ A) / np.outer(wn, an)
    np.fill_diagonal(C, -np.inf)
    return float(np.max(C))
