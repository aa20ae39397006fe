# cython: language_level=3
"""Compiled fitting kernels.

Mirrors the contracts of the pure-numpy module exactly: Householder QR with
the same rank tolerance, IRLS with the same clipping and stopping rules.  The
loops here dominate the simulation runtime, which is why they are compiled.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt

cnp.import_array()

cdef double RANK_TOL = 1e-10
cdef double PROB_CLIP = 1e-10


@cython.boundscheck(False)
@cython.wraparound(False)
cdef int _householder_qr(double[:, ::1] a, double[::1] b) noexcept nogil:
    """Factor ``a`` in place and apply the transposed Q to ``b``.

    On exit the upper triangle of ``a`` holds R and ``b`` holds Q^T b (the
    sub-diagonal entries are scratch).  Returns 1 on rank deficiency.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double col, scale, sigma, v0, vtv, proj, r_kk
    scale = 0.0
    for j in range(p):
        col = 0.0
        for i in range(n):
            col += a[i, j] * a[i, j]
        col = sqrt(col)
        if col > scale:
            scale = col
    if scale == 0.0:
        return 1
    for k in range(p):
        sigma = 0.0
        for i in range(k, n):
            sigma += a[i, k] * a[i, k]
        sigma = sqrt(sigma)
        if sigma <= RANK_TOL * scale:
            return 1
        if a[k, k] >= 0.0:
            r_kk = -sigma
        else:
            r_kk = sigma
        v0 = a[k, k] - r_kk
        a[k, k] = v0
        vtv = 0.0
        for i in range(k, n):
            vtv += a[i, k] * a[i, k]
        for j in range(k + 1, p):
            proj = 0.0
            for i in range(k, n):
                proj += a[i, k] * a[i, j]
            proj = 2.0 * proj / vtv
            for i in range(k, n):
                a[i, j] -= proj * a[i, k]
        proj = 0.0
        for i in range(k, n):
            proj += a[i, k] * b[i]
        proj = 2.0 * proj / vtv
        for i in range(k, n):
            b[i] -= proj * a[i, k]
        a[k, k] = r_kk
    return 0


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _back_solve(double[:, ::1] r, double[::1] qtb, double[::1] beta) noexcept nogil:
    cdef Py_ssize_t p = r.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(p - 1, -1, -1):
        acc = qtb[i]
        for j in range(i + 1, p):
            acc -= r[i, j] * beta[j]
        beta[i] = acc / r[i, i]


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _invert_upper(double[:, ::1] r, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t p = r.shape[1]
    cdef Py_ssize_t i, j, col
    cdef double acc
    for col in range(p):
        for i in range(p - 1, -1, -1):
            if i > col:
                out[i, col] = 0.0
                continue
            acc = 1.0 if i == col else 0.0
            for j in range(i + 1, p):
                acc -= r[i, j] * out[j, col]
            out[i, col] = acc / r[i, i]


def ols_qr(X, y):
    """Least-squares fit via Householder QR; see the fallback for the contract."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] a = np.array(X, dtype=np.float64, order="C", copy=True)
    cdef cnp.ndarray[double, ndim=1] qtb = np.array(y, dtype=np.float64, copy=True)
    cdef Py_ssize_t p = a.shape[1]
    cdef cnp.ndarray[double, ndim=1] beta = np.zeros(p)
    cdef cnp.ndarray[double, ndim=2, mode="c"] r_inv = np.zeros((p, p))
    if _householder_qr(a, qtb):
        return beta, r_inv, False
    _back_solve(a, qtb, beta)
    _invert_upper(a, r_inv)
    return beta, r_inv, True


@cython.boundscheck(False)
@cython.wraparound(False)
def logistic_irls(X, y, double tol=1e-8, int max_iter=25):
    """Logistic IRLS; see the fallback for the contract."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] xmat = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] yvec = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xmat.shape[0]
    cdef Py_ssize_t p = xmat.shape[1]
    cdef cnp.ndarray[double, ndim=1] beta = np.zeros(p)
    cdef cnp.ndarray[double, ndim=1] beta_new = np.zeros(p)
    cdef cnp.ndarray[double, ndim=1] fitted = np.zeros(n)
    cdef cnp.ndarray[double, ndim=2, mode="c"] work = np.zeros((n, p))
    cdef cnp.ndarray[double, ndim=1] zwork = np.zeros(n)
    cdef cnp.ndarray[double, ndim=2, mode="c"] r_inv = np.zeros((p, p))
    cdef cnp.ndarray[double, ndim=2, mode="c"] cov = np.zeros((p, p))
    cdef double[:, ::1] xv = xmat
    cdef double[::1] yv = yvec
    cdef double[::1] bv = beta
    cdef double[::1] bn = beta_new
    cdef double[::1] fit = fitted
    cdef double[:, ::1] wv = work
    cdef double[::1] zv = zwork
    cdef double[:, ::1] riv = r_inv
    cdef double[:, ::1] cv = cov
    cdef Py_ssize_t i, j, k, it
    cdef double eta, mu, w, sw, step, diff, acc
    cdef bint converged = False
    cdef int n_iter = 0
    for it in range(1, max_iter + 1):
        n_iter = it
        for i in range(n):
            eta = 0.0
            for j in range(p):
                eta += xv[i, j] * bv[j]
            mu = 1.0 / (1.0 + exp(-eta))
            if mu < PROB_CLIP:
                mu = PROB_CLIP
            elif mu > 1.0 - PROB_CLIP:
                mu = 1.0 - PROB_CLIP
            w = mu * (1.0 - mu)
            sw = sqrt(w)
            for j in range(p):
                wv[i, j] = xv[i, j] * sw
            zv[i] = (eta + (yv[i] - mu) / w) * sw
        if _householder_qr(wv, zv):
            for i in range(n):
                eta = 0.0
                for j in range(p):
                    eta += xv[i, j] * bv[j]
                fit[i] = 1.0 / (1.0 + exp(-eta))
            return beta, cov, fitted, False, n_iter, False
        _back_solve(wv, zv, bn)
        step = 0.0
        for j in range(p):
            diff = fabs(bn[j] - bv[j])
            if diff > step:
                step = diff
            bv[j] = bn[j]
        if step < tol:
            converged = True
            break
    for i in range(n):
        eta = 0.0
        for j in range(p):
            eta += xv[i, j] * bv[j]
        fit[i] = 1.0 / (1.0 + exp(-eta))
        mu = fit[i]
        if mu < PROB_CLIP:
            mu = PROB_CLIP
        elif mu > 1.0 - PROB_CLIP:
            mu = 1.0 - PROB_CLIP
        sw = sqrt(mu * (1.0 - mu))
        for j in range(p):
            wv[i, j] = xv[i, j] * sw
        zv[i] = 0.0
    if _householder_qr(wv, zv):
        return beta, cov, fitted, converged, n_iter, False
    _invert_upper(wv, riv)
    for i in range(p):
        for j in range(p):
            acc = 0.0
            for k in range(p):
                acc += riv[i, k] * riv[j, k]
            cv[i, j] = acc
    return beta, cov, fitted, converged, n_iter, True
