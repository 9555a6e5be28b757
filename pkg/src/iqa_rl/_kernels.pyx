# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, sqrt

cnp.import_array()

cdef double _SQRT1_2 = 0.70710678118654752440


cdef inline double _phi(double z) noexcept nogil:
    return 0.5 * erfc(-z * _SQRT1_2)


def normal_cdf(z):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(z, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _phi(flat[i])
    return out.reshape(np.shape(z))


def group_stats(ratings, offsets, double v_floor):
    cdef const double[::1] r = np.ascontiguousarray(ratings, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t ng = off.shape[0] - 1
    mu_arr = np.empty(ng, dtype=np.float64)
    var_arr = np.empty(ng, dtype=np.float64)
    cdef double[::1] mu = mu_arr
    cdef double[::1] var = var_arr
    cdef Py_ssize_t g, t, n
    cdef double s, d
    for g in range(ng):
        n = off[g + 1] - off[g]
        s = 0.0
        for t in range(off[g], off[g + 1]):
            s += r[t]
        mu[g] = s / n
        s = 0.0
        for t in range(off[g], off[g + 1]):
            d = r[t] - mu[g]
            s += d * d
        var[g] = s / (n - 1) if n > 1 else 0.0
        if var[g] < v_floor:
            var[g] = v_floor
    return mu_arr, var_arr


def rank_rewards(ratings, offsets, mos, double v_floor):
    cdef const double[::1] r = np.ascontiguousarray(ratings, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const double[::1] m = np.ascontiguousarray(mos, dtype=np.float64)
    cdef Py_ssize_t ng = off.shape[0] - 1
    mu_arr, var_arr = group_stats(r, off, v_floor)
    cdef const double[::1] mu = mu_arr
    cdef const double[::1] var = var_arr
    out_arr = np.empty(r.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double acc, p, q
    with nogil:
        for i in range(ng):
            for t in range(off[i], off[i + 1]):
                acc = 0.0
                for j in range(ng):
                    if j == i:
                        continue
                    p = _phi((r[t] - mu[j]) / sqrt(var[i] + var[j]))
                    if m[i] > m[j]:
                        q = 1.0
                    elif m[i] < m[j]:
                        q = 0.0
                    else:
                        q = 0.5
                    acc += sqrt(p * q) + sqrt((1.0 - p) * (1.0 - q))
                out[t] = acc / (ng - 1)
    return out_arr


def token_covariance(logp, adv):
    cdef const double[::1] lp = np.ascontiguousarray(logp, dtype=np.float64)
    cdef const double[::1] a = np.ascontiguousarray(adv, dtype=np.float64)
    cdef Py_ssize_t n = lp.shape[0], i
    cdef double mlp = 0.0, ma = 0.0
    for i in range(n):
        mlp += lp[i]
        ma += a[i]
    mlp /= n
    ma /= n
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = (lp[i] - mlp) * (a[i] - ma)
    return out_arr


def trajectory_surrogates(lp_new, lp_old, adv, valid, offsets, double eps_clip):
    cdef const double[::1] ln = np.ascontiguousarray(lp_new, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(lp_old, dtype=np.float64)
    cdef const double[::1] a = np.ascontiguousarray(adv, dtype=np.float64)
    cdef const double[::1] v = np.ascontiguousarray(valid, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t nt = off.shape[0] - 1, k, t
    out_arr = np.empty(nt, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double num, den, ratio, clipped, u, c
    for k in range(nt):
        num = 0.0
        den = 0.0
        for t in range(off[k], off[k + 1]):
            den += v[t]
            if v[t] > 0:
                ratio = exp(ln[t] - lo[t])
                clipped = ratio
                if clipped < 1.0 - eps_clip:
                    clipped = 1.0 - eps_clip
                elif clipped > 1.0 + eps_clip:
                    clipped = 1.0 + eps_clip
                u = ratio * a[t]
                c = clipped * a[t]
                num += u if u < c else c
        out[k] = num / den
    return out_arr


def laplacian_variance(luma):
    cdef const double[:, ::1] y = np.ascontiguousarray(luma, dtype=np.float64)
    cdef Py_ssize_t h = y.shape[0], w = y.shape[1], i, j
    cdef double s = 0.0, ss = 0.0, lap, mean
    cdef double n = (h - 2) * (w - 2)
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            lap = y[i - 1, j] + y[i + 1, j] + y[i, j - 1] + y[i, j + 1] - 4.0 * y[i, j]
            s += lap
    mean = s / n
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            lap = y[i - 1, j] + y[i + 1, j] + y[i, j - 1] + y[i, j + 1] - 4.0 * y[i, j] - mean
            ss += lap * lap
    return ss / n
