# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``isoball._pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, INFINITY

from ._recurrence import normalized_tables

cnp.import_array()

cdef double SQRT2 = sqrt(2.0)


cdef enum:
    CHUNK = 256


cdef void _recurrence_coeffs(Py_ssize_t L, double[::1] alpha, double[::1] beta) noexcept nogil:
    # P_{l+1} = alpha[l] t P_l - beta[l] P_{l-1}
    cdef Py_ssize_t ell
    for ell in range(1, L):
        alpha[ell] = (2.0 * ell + 1.0) / (ell + 1.0)
        beta[ell] = ell / (ell + 1.0)


def legendre_series(t, weights):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64).ravel()
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = tv.shape[0], L = w.shape[0] - 1, i, ell, lo, hi
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double[::1] alpha = np.zeros(max(L, 1))
    cdef double[::1] beta = np.zeros(max(L, 1))
    cdef double p0[CHUNK]
    cdef double p1[CHUNK]
    cdef double p2
    if L < 0:
        return out_arr.reshape(np.shape(t))
    with nogil:
        _recurrence_coeffs(L, alpha, beta)
        lo = 0
        while lo < n:
            hi = min(lo + <Py_ssize_t>CHUNK, n)
            for i in range(lo, hi):
                p0[i - lo] = 1.0
                p1[i - lo] = tv[i]
                out[i] = w[0]
                if L >= 1:
                    out[i] = out[i] + w[1] * tv[i]
            for ell in range(1, L):
                for i in range(lo, hi):
                    p2 = alpha[ell] * tv[i] * p1[i - lo] - beta[ell] * p0[i - lo]
                    out[i] = out[i] + w[ell + 1] * p2
                    p0[i - lo] = p1[i - lo]
                    p1[i - lo] = p2
            lo = hi
    return out_arr.reshape(np.shape(t))


def legendre_gap_series(u, weights):
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64).ravel()
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0], L = w.shape[0] - 1, i, ell, lo, hi
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double[::1] alpha = np.zeros(max(L, 1))
    cdef double[::1] beta = np.zeros(max(L, 1))
    cdef double q0[CHUNK]
    cdef double q1[CHUNK]
    cdef double q2, x
    if L < 1:
        return out_arr.reshape(np.shape(u))
    with nogil:
        _recurrence_coeffs(L, alpha, beta)
        lo = 0
        while lo < n:
            hi = min(lo + <Py_ssize_t>CHUNK, n)
            for i in range(lo, hi):
                q0[i - lo] = 0.0
                q1[i - lo] = uv[i]
                out[i] = w[1] * uv[i]
            for ell in range(1, L):
                for i in range(lo, hi):
                    x = uv[i]
                    q2 = alpha[ell] * (x + q1[i - lo] - x * q1[i - lo]) - beta[ell] * q0[i - lo]
                    out[i] = out[i] + w[ell + 1] * q2
                    q0[i - lo] = q1[i - lo]
                    q1[i - lo] = q2
            lo = hi
    return out_arr.reshape(np.shape(u))


def harmonics_matrix(int lmax, theta, phi):
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    diag_a, sub_a, a_a, b_a = normalized_tables(lmax)
    cdef const double[::1] diag = diag_a
    cdef const double[::1] sub = sub_a
    cdef const double[:, ::1] a = a_a
    cdef const double[:, ::1] b = b_a
    cdef Py_ssize_t n = th.shape[0], i, m, ell, base
    out_arr = np.zeros((n, (lmax + 1) * (lmax + 1)))
    cdef double[:, ::1] out = out_arr
    cdef double t, s, lam_mm, l0, l1, l2, cm, sm
    with nogil:
        for i in range(n):
            t = cos(th[i])
            s = sin(th[i])
            lam_mm = diag[0]
            for m in range(lmax + 1):
                if m > 0:
                    lam_mm = lam_mm * s * diag[m]
                    cm = SQRT2 * cos(m * ph[i])
                    sm = SQRT2 * sin(m * ph[i])
                else:
                    cm = 1.0
                    sm = 0.0
                l1 = lam_mm
                l0 = 0.0
                for ell in range(m, lmax + 1):
                    if ell == m:
                        l2 = lam_mm
                    elif ell == m + 1:
                        l2 = t * sub[m] * lam_mm
                    else:
                        l2 = a[ell, m] * (t * l1 - b[ell, m] * l0)
                    if ell > m:
                        l0 = l1
                        l1 = l2
                    base = ell * ell + ell
                    if m == 0:
                        out[i, base] = l2
                    else:
                        out[i, base + m] = l2 * cm
                        out[i, base - m] = l2 * sm
    return out_arr


def synth_points(coeffs, int lmax, theta, phi):
    cdef const double[::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    diag_a, sub_a, a_a, b_a = normalized_tables(lmax)
    cdef const double[::1] diag = diag_a
    cdef const double[::1] sub = sub_a
    cdef const double[:, ::1] a = a_a
    cdef const double[:, ::1] b = b_a
    cdef Py_ssize_t n = th.shape[0], i, m, ell, base
    out_arr = np.zeros(n)
    cdef double[::1] out = out_arr
    cdef double t, s, lam_mm, l0, l1, l2, acc_c, acc_s, total
    with nogil:
        for i in range(n):
            t = cos(th[i])
            s = sin(th[i])
            lam_mm = diag[0]
            total = 0.0
            for m in range(lmax + 1):
                if m > 0:
                    lam_mm = lam_mm * s * diag[m]
                acc_c = 0.0
                acc_s = 0.0
                l1 = lam_mm
                l0 = 0.0
                for ell in range(m, lmax + 1):
                    if ell == m:
                        l2 = lam_mm
                    elif ell == m + 1:
                        l2 = t * sub[m] * lam_mm
                    else:
                        l2 = a[ell, m] * (t * l1 - b[ell, m] * l0)
                    if ell > m:
                        l0 = l1
                        l1 = l2
                    base = ell * ell + ell
                    acc_c = acc_c + c[base + m] * l2
                    if m > 0:
                        acc_s = acc_s + c[base - m] * l2
                if m == 0:
                    total = total + acc_c
                else:
                    total = total + SQRT2 * (acc_c * cos(m * ph[i]) + acc_s * sin(m * ph[i]))
            out[i] = total
    return out_arr


def greedy_cover(xyz, double chord_sq_radius, Py_ssize_t start=0):
    cdef const double[:, ::1] x = np.ascontiguousarray(xyz, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], i, current = start, far
    nearest_arr = np.full(n, np.inf)
    cdef double[::1] nearest = nearest_arr
    cdef double dx, dy, dz, d2, best
    centers = []
    while True:
        centers.append(current)
        best = -1.0
        far = 0
        with nogil:
            for i in range(n):
                dx = x[i, 0] - x[current, 0]
                dy = x[i, 1] - x[current, 1]
                dz = x[i, 2] - x[current, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < nearest[i]:
                    nearest[i] = d2
                if nearest[i] > best:
                    best = nearest[i]
                    far = i
        if best <= chord_sq_radius:
            break
        current = far
    return np.asarray(centers, dtype=np.intp), nearest_arr


def abs_max_columns(values):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0], k = v.shape[1], i, j
    out_arr = np.zeros(k)
    cdef double[::1] out = out_arr
    cdef double x
    with nogil:
        for i in range(n):
            for j in range(k):
                x = fabs(v[i, j])
                if x > out[j]:
                    out[j] = x
    return out_arr
