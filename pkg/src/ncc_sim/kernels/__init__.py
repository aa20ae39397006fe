"""Fitting kernels with a compiled core and a pure-numpy fallback.

Both implementations expose the same two functions:

``ols_qr(X, y) -> (beta, r_inv, ok)``
    Least squares through Householder QR.  ``r_inv`` is the inverse
    triangular factor, so ``r_inv @ r_inv.T`` is the unscaled covariance and
    ``((X @ r_inv) ** 2).sum(axis=1)`` gives the leverages.  ``ok`` is False
    when a diagonal of R falls below 1e-10 times the largest column norm.

``logistic_irls(X, y, tol=1e-8, max_iter=25) -> (beta, cov, fitted, converged, n_iter, ok)``
    Logistic maximum likelihood from a zero start, stopping when the largest
    coefficient update drops below ``tol``.  Fitted probabilities are clipped
    to [1e-10, 1 - 1e-10] inside the reweighting only; ``fitted`` is returned
    unclipped so callers can detect separation.

The environment variable ``NCC_SIM_BACKEND`` picks the implementation:
``compiled`` (fail if the extension is missing), ``python``, or ``auto``
(default: compiled when available).
"""

from __future__ import annotations

import os

from . import _fallback

_choice = os.environ.get("NCC_SIM_BACKEND", "auto").lower()
if _choice not in ("auto", "compiled", "python"):
    raise ImportError(f"NCC_SIM_BACKEND must be auto, compiled, or python, got {_choice!r}")

if _choice == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "NCC_SIM_BACKEND=compiled but the ncc_sim.kernels._core extension "
                "is not built; reinstall the package or use NCC_SIM_BACKEND=python"
            )
        _impl = _fallback
        BACKEND = "python"

ols_qr = _impl.ols_qr
logistic_irls = _impl.logistic_irls

RANK_TOL = _fallback.RANK_TOL
PROB_CLIP = _fallback.PROB_CLIP

__all__ = ["BACKEND", "PROB_CLIP", "RANK_TOL", "logistic_irls", "ols_qr"]
