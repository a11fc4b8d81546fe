# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same contracts as ``_pykernels``."""
import numpy as np
from libc.math cimport exp, fabs


cdef inline double _logistic(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _st(double z, double kappa) nogil:
    cdef double m = fabs(z) - kappa
    if m <= 0.0:
        return 0.0
    return m if z > 0 else -m


def logistic(x):
    cdef const double[::1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = flat.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = _logistic(flat[i])
    return out_arr.reshape(np.shape(x))


def logistic_attention(vh, qh, kh):
    """``vh @ logistic(qh.T @ kh)``: BLAS for both products, logistic applied in place."""
    v = np.ascontiguousarray(vh, dtype=np.float64)
    q = np.asarray(qh, dtype=np.float64)
    k = np.asarray(kh, dtype=np.float64)
    if v.ndim != 2 or q.ndim != 2 or k.ndim != 2 or q.shape[1] != v.shape[1] or k.shape[0] != q.shape[0]:
        raise ValueError("shape mismatch in logistic_attention")
    scores_arr = np.ascontiguousarray(q.T @ k)
    cdef double[:, ::1] s = scores_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(s.shape[0]):
            for j in range(s.shape[1]):
                s[i, j] = _logistic(s[i, j])
    return v @ scores_arr


def soft_threshold(z, double kappa):
    cdef const double[::1] flat = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = flat.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = _st(flat[i], kappa)
    return out_arr.reshape(np.shape(z))


def ista_path(phi, y, double lam, double eta, Py_ssize_t n_steps, rho0=None):
    cdef const double[:, ::1] a = np.ascontiguousarray(phi, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n_obs = a.shape[0], p = a.shape[1]
    if b.shape[0] != n_obs:
        raise ValueError("shape mismatch in ista_path")
    out_arr = np.empty((n_steps + 1, p))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] rho = np.zeros(p) if rho0 is None else np.array(rho0, dtype=np.float64)
    cdef double[::1] resid = np.empty(n_obs)
    cdef double[::1] grad = np.empty(p)
    cdef double scale = 2.0 * eta / n_obs, kappa = eta * lam, acc
    cdef Py_ssize_t t, i, j
    with nogil:
        for j in range(p):
            out[0, j] = rho[j]
        for t in range(n_steps):
            for i in range(n_obs):
                acc = b[i]
                for j in range(p):
                    acc = acc - a[i, j] * rho[j]
                resid[i] = acc
            for j in range(p):
                grad[j] = 0.0
            for i in range(n_obs):
                for j in range(p):
                    grad[j] = grad[j] + a[i, j] * resid[i]
            for j in range(p):
                rho[j] = _st(rho[j] + scale * grad[j], kappa)
                out[t + 1, j] = rho[j]
    return out_arr
