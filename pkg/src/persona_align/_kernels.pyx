# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the loading-softmax and M-step gradient kernels.

Same signatures and results as ``_kernels_py``; the work is done in one pass
per record row instead of through (N, K) temporaries.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


cdef void _unit_rows(double[:, ::1] e, double[:, ::1] out, double[::1] norms) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(e.shape[0]):
        acc = 0.0
        for j in range(e.shape[1]):
            acc += e[i, j] * e[i, j]
        norms[i] = sqrt(acc)
        for j in range(e.shape[1]):
            out[i, j] = e[i, j] / norms[i]


cdef inline double _clip(double x) noexcept nogil:
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


def loading_matrix(e_rec, e_basis, double lam):
    cdef double[:, ::1] er = np.ascontiguousarray(e_rec, dtype=np.float64)
    cdef double[:, ::1] eb = np.ascontiguousarray(e_basis, dtype=np.float64)
    cdef Py_ssize_t n = er.shape[0], k = eb.shape[0], d = er.shape[1]
    a_arr = np.empty((n, d)); b_arr = np.empty((k, d))
    na_arr = np.empty(n); nb_arr = np.empty(k)
    cdef double[:, ::1] a = a_arr, b = b_arr
    cdef double[::1] na = na_arr, nb = nb_arr
    s_arr = np.empty((n, k)); p_arr = np.empty((n, k))
    cdef double[:, ::1] s = s_arr, p = p_arr
    cdef Py_ssize_t i, j, m
    cdef double acc, zmax, tot
    with nogil:
        _unit_rows(er, a, na)
        _unit_rows(eb, b, nb)
        for i in range(n):
            zmax = -1e300
            for j in range(k):
                acc = 0.0
                for m in range(d):
                    acc += a[i, m] * b[j, m]
                acc = _clip(acc)
                s[i, j] = acc
                if lam * acc > zmax:
                    zmax = lam * acc
            tot = 0.0
            for j in range(k):
                p[i, j] = exp(lam * s[i, j] - zmax)
                tot += p[i, j]
            for j in range(k):
                p[i, j] = p[i, j] / tot
    return s_arr, p_arr


def weighted_loglik_grad(e_rec, e_basis, weights, double lam):
    cdef double[:, ::1] er = np.ascontiguousarray(e_rec, dtype=np.float64)
    cdef double[:, ::1] eb = np.ascontiguousarray(e_basis, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = er.shape[0], k = eb.shape[0], d = er.shape[1]
    a_arr = np.empty((n, d)); b_arr = np.empty((k, d))
    na_arr = np.empty(n); nb_arr = np.empty(k)
    cdef double[:, ::1] a = a_arr, b = b_arr
    cdef double[::1] na = na_arr, nb = nb_arr
    grec_arr = np.zeros((n, d)); gbas_arr = np.zeros((k, d))
    cdef double[:, ::1] grec = grec_arr, gbas = gbas_arr
    srow_arr = np.empty(k); prow_arr = np.empty(k)
    colsum_arr = np.zeros(k)
    cdef double[::1] srow = srow_arr, prow = prow_arr, colsum = colsum_arr
    cdef Py_ssize_t i, j, m
    cdef double acc, zmax, tot, logtot, wsum, g, gs_row, value = 0.0
    with nogil:
        _unit_rows(er, a, na)
        _unit_rows(eb, b, nb)
        for i in range(n):
            zmax = -1e300
            wsum = 0.0
            for j in range(k):
                acc = 0.0
                for m in range(d):
                    acc += a[i, m] * b[j, m]
                acc = _clip(acc)
                srow[j] = acc
                if lam * acc > zmax:
                    zmax = lam * acc
                wsum += w[i, j]
            tot = 0.0
            for j in range(k):
                prow[j] = exp(lam * srow[j] - zmax)
                tot += prow[j]
            logtot = log(tot)
            gs_row = 0.0
            for j in range(k):
                if w[i, j] != 0.0:
                    value += w[i, j] * (lam * srow[j] - zmax - logtot)
                g = lam * (w[i, j] - wsum * prow[j] / tot)
                gs_row += g * srow[j]
                colsum[j] += g * srow[j]
                for m in range(d):
                    grec[i, m] += g * b[j, m]
                    gbas[j, m] += g * a[i, m]
            for m in range(d):
                grec[i, m] = (grec[i, m] - gs_row * a[i, m]) / na[i]
        for j in range(k):
            for m in range(d):
                gbas[j, m] = (gbas[j, m] - colsum[j] * b[j, m]) / nb[j]
    return value, grec_arr, gbas_arr
