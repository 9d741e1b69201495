# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: radial table lookup and superposed static fields.

Semantics are mirrored exactly by :mod:`cpnlab._core_py`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, pow, floor, fabs, cos, sin

cnp.import_array()

# Distances below this are clamped before the table lookup so that grid
# quadratures never produce inf/nan at a coincident node.
cdef double R_FLOOR = 1e-12


cdef inline double _lookup(double r, int mode, double u0, double du, double scale,
                           const double[:, ::1] coef, const double[::1] radii,
                           const double[::1] values, double r_min, double r_max,
                           double p_lo, double p_hi, double mass) noexcept nogil:
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t i
    cdef double u, t, x
    if r > r_max:
        return values[n - 1] * pow(r_max / r, p_hi) * exp(-mass * (r - r_max))
    if mode == 0:
        if r < r_min:
            return values[0] * pow(r_min / r, p_lo)
        u = log(r)
    else:
        u = log1p(r / scale)
    t = (u - u0) / du
    i = <Py_ssize_t>floor(t + 0.5)
    if i >= 0 and i < n and radii[i] == r:
        return values[i]
    i = <Py_ssize_t>floor(t)
    if i < 0:
        i = 0
    elif i > n - 2:
        i = n - 2
    x = u - (u0 + i * du)
    return exp(((coef[i, 0] * x + coef[i, 1]) * x + coef[i, 2]) * x + coef[i, 3])


def table_eval(const double[::1] r, int mode, double u0, double du, double scale,
               const double[:, ::1] coef, const double[::1] radii,
               const double[::1] values, double r_min, double r_max,
               double p_lo, double p_hi, double mass):
    cdef Py_ssize_t k, n = r.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            o[k] = _lookup(r[k], mode, u0, du, scale, coef, radii, values,
                           r_min, r_max, p_lo, p_hi, mass)
    return out


def kernel_field(const double[:, ::1] points, const double[:, ::1] pos,
                 const double[::1] q, int mode, double u0, double du, double scale,
                 const double[:, ::1] coef, const double[::1] radii,
                 const double[::1] values, double r_min, double r_max,
                 double p_lo, double p_hi, double mass):
    """sum_j q_j G(|x - y_j|) at every row x of ``points``."""
    cdef Py_ssize_t P = points.shape[0], n = pos.shape[0], d = points.shape[1]
    cdef Py_ssize_t a, j, c
    cdef double acc, r2, diff, r
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for a in range(P):
            acc = 0.0
            for j in range(n):
                r2 = 0.0
                for c in range(d):
                    diff = points[a, c] - pos[j, c]
                    r2 = r2 + diff * diff
                r = sqrt(r2)
                if r < R_FLOOR:
                    r = R_FLOOR
                acc = acc + q[j] * _lookup(r, mode, u0, du, scale, coef, radii,
                                           values, r_min, r_max, p_lo, p_hi, mass)
            o[a] = acc
    return out


def indicator_field(const double[:, ::1] points, const double[:, ::1] pos,
                    const double[::1] q, double radius):
    """sum_j q_j 1{|x - y_j| < radius} (open balls)."""
    cdef Py_ssize_t P = points.shape[0], n = pos.shape[0], d = points.shape[1]
    cdef Py_ssize_t a, j, c
    cdef double acc, r2, diff, rr = radius * radius
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for a in range(P):
            acc = 0.0
            for j in range(n):
                r2 = 0.0
                for c in range(d):
                    diff = points[a, c] - pos[j, c]
                    r2 = r2 + diff * diff
                if r2 < rr:
                    acc = acc + q[j]
            o[a] = acc
    return out


def cos_sum(const double[::1] phi, double alpha, const double[::1] weights):
    """sum_k weights_k * (cos(alpha * phi_k) - 1)."""
    cdef Py_ssize_t k, n = phi.shape[0]
    cdef double acc = 0.0
    with nogil:
        for k in range(n):
            acc = acc + weights[k] * (cos(alpha * phi[k]) - 1.0)
    return acc


def min_distance2(const double[:, ::1] pos, const double[::1] y, Py_ssize_t skip):
    """Smallest squared distance from ``y`` to rows of ``pos`` other than ``skip``."""
    cdef Py_ssize_t n = pos.shape[0], d = pos.shape[1], j, c
    cdef double best = 1e308, r2, diff
    with nogil:
        for j in range(n):
            if j == skip:
                continue
            r2 = 0.0
            for c in range(d):
                diff = pos[j, c] - y[c]
                r2 = r2 + diff * diff
            if r2 < best:
                best = r2
    return best
