# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; mirrors ``_kernels_py`` function for function."""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, exp, sqrt, isinf, INFINITY

cnp.import_array()

BACKEND = "cython"

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


cdef inline double _fold(int code) nogil:
    return 2.0 if (code == 1 or code == 3) else 1.0


cdef struct Pieces:
    double sq, a, pa, sfa, b, pb, sfb
    bint clipped


cdef inline Pieces _pieces(double tau, double m, double q) nogil:
    cdef Pieces p
    p.sq = sqrt(q)
    p.a = tau / p.sq
    p.pa = exp(-0.5 * p.a * p.a) * INV_SQRT2PI
    p.sfa = 0.5 * erfc(p.a * INV_SQRT2)
    p.clipped = not isinf(m)
    if p.clipped:
        p.b = (tau + m) / p.sq
        p.pb = exp(-0.5 * p.b * p.b) * INV_SQRT2PI
        p.sfb = 0.5 * erfc(p.b * INV_SQRT2)
    else:
        p.b = INFINITY
        p.pb = 0.0
        p.sfb = 0.0
    return p


cdef inline double _second_moment(int code, double tau, double m, double q) nogil:
    cdef Pieces p = _pieces(tau, m, q)
    cdef double i0 = p.sfa - p.sfb
    cdef double i1 = p.pa - p.pb
    cdef double i2 = p.a * p.pa + i0
    cdef double tail = 0.0
    if p.clipped:
        i2 -= p.b * p.pb
        tail = m * m * p.sfb
    return _fold(code) * (q * i2 - 2.0 * p.sq * tau * i1 + tau * tau * i0 + tail)


cdef inline double _vmap(int code, double tau, double m, double sw2, double sb2, double q) nogil:
    return sw2 * _second_moment(code, tau, m, q) + sb2


def second_moment(int code, double tau, double m, double q):
    return _second_moment(code, tau, m, q)


def vmap(int code, double tau, double m, double sw2, double sb2, double q):
    return _vmap(code, tau, m, sw2, sb2, q)


def vmap_d1(int code, double tau, double m, double sw2, double q):
    cdef Pieces p = _pieces(tau, m, q)
    cdef double val = p.sfa - p.sfb
    if p.clipped:
        val -= m / p.sq * p.pb
    return sw2 * _fold(code) * val


def vmap_d2(int code, double tau, double m, double sw2, double q):
    cdef Pieces p = _pieces(tau, m, q)
    cdef double val = p.a * p.pa / (2.0 * q)
    if p.clipped:
        val -= p.b * p.pb / (2.0 * q)
        val -= m * p.pb * (p.b * p.b - 1.0) / (2.0 * q * p.sq)
    return sw2 * _fold(code) * val


def slope_mass(int code, double tau, double m, double q):
    cdef Pieces p = _pieces(tau, m, q)
    return _fold(code) * (p.sfa - p.sfb)


def chi1(int code, double tau, double m, double sw2, double q):
    return sw2 * slope_mass(code, tau, m, q)


def vmap_grid(int code, double tau, double m, double sw2, double sb2, qs):
    cdef double[::1] src = np.ascontiguousarray(qs, dtype=np.float64)
    out = np.empty(src.shape[0], dtype=np.float64)
    cdef double[::1] dst = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(src.shape[0]):
            dst[i] = _vmap(code, tau, m, sw2, sb2, src[i])
    return out


def iterate_vmap(int code, double tau, double m, double sw2, double sb2,
                 double q1, Py_ssize_t n, double limit):
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] dst = out
    cdef double q = q1
    cdef Py_ssize_t i
    cdef Py_ssize_t stop = -1
    with nogil:
        for i in range(n):
            dst[i] = q
            if not q <= limit:
                stop = i
                break
            if i + 1 < n:
                q = _vmap(code, tau, m, sw2, sb2, q)
    if stop >= 0:
        return out[: stop + 1], True
    return out, False


def act_forward(int code, double tau, double m, h):
    cdef double[:, ::1] src = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t rows = src.shape[0], cols = src.shape[1]
    x_arr = np.empty((rows, cols), dtype=np.float64)
    d_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] d = d_arr
    cdef Py_ssize_t i, j
    cdef long long zeros = 0
    cdef double v, r, hi = tau + m
    cdef bint odd = (code == 1 or code == 3)
    with nogil:
        for i in range(rows):
            for j in range(cols):
                v = src[i, j]
                if not odd:
                    r = v - tau
                    if r < 0.0:
                        x[i, j] = 0.0
                        d[i, j] = 0.0
                    elif r < m:
                        x[i, j] = r
                        d[i, j] = 1.0
                    else:
                        x[i, j] = m
                        d[i, j] = 0.0
                else:
                    if v >= hi:
                        x[i, j] = m
                        d[i, j] = 0.0
                    elif v >= tau:
                        x[i, j] = v - tau
                        d[i, j] = 1.0
                    elif v >= -tau:
                        x[i, j] = 0.0
                        d[i, j] = 0.0
                    elif v >= -hi:
                        x[i, j] = v + tau
                        d[i, j] = 1.0
                    else:
                        x[i, j] = -m
                        d[i, j] = 0.0
                if x[i, j] == 0.0:
                    zeros += 1
    return x_arr, d_arr, zeros
