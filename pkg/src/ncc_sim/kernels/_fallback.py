"""Pure-numpy reference kernels.

Same contracts as the compiled module; see the package ``__init__`` for the
backend selection rules.  Solves go through an orthogonal decomposition, never
through explicitly inverted normal equations.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

RANK_TOL = 1e-10
PROB_CLIP = 1e-10


def ols_qr(X: np.ndarray, y: np.ndarray):
    """Least-squares fit via thin QR.

    Returns ``(beta, r_inv, ok)`` where ``r_inv`` is the inverse of the
    triangular QR factor, so the unscaled coefficient covariance is
    ``r_inv @ r_inv.T``.  ``ok`` is False when a diagonal of R falls below
    ``RANK_TOL`` times the largest column norm.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    col_norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    scale = col_norms.max() if p else 0.0
    q, r = np.linalg.qr(X)
    if scale == 0.0 or np.any(np.abs(np.diag(r)) <= RANK_TOL * scale):
        return np.zeros(p), np.zeros((p, p)), False
    beta = solve_triangular(r, q.T @ y)
    r_inv = solve_triangular(r, np.eye(p))
    return beta, r_inv, True


def logistic_irls(X: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 25):
    """Logistic maximum likelihood via iteratively reweighted least squares.

    Returns ``(beta, cov, fitted, converged, n_iter, ok)``.  ``fitted`` holds
    the unclipped fitted probabilities at the final coefficients and ``cov``
    the inverse observed information there.  Convergence means the largest
    absolute coefficient change dropped below ``tol``; ``ok`` is False when a
    weighted solve went rank deficient.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    beta = np.zeros(p)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = X @ beta
        mu = np.clip(expit(eta), PROB_CLIP, 1.0 - PROB_CLIP)
        w = mu * (1.0 - mu)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        beta_new, _, ok = ols_qr(X * sw[:, None], z * sw)
        if not ok:
            return beta, np.zeros((p, p)), expit(X @ beta), False, n_iter, False
        step = np.max(np.abs(beta_new - beta))
        beta = beta_new
        if step < tol:
            converged = True
            break
    fitted = expit(X @ beta)
    mu = np.clip(fitted, PROB_CLIP, 1.0 - PROB_CLIP)
    sw = np.sqrt(mu * (1.0 - mu))
    _, r_inv, ok = ols_qr(X * sw[:, None], np.zeros(n))
    if not ok:
        return beta, np.zeros((p, p)), fitted, converged, n_iter, False
    cov = r_inv @ r_inv.T
    return beta, cov, fitted, converged, n_iter, True
