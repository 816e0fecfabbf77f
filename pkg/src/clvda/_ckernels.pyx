# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 kernels for the state and tangent equations.

Signatures mirror ``clvda._pykernels``; all heavy loops run without the GIL.
"""
import numpy as np
from libc.stdlib cimport malloc, free


cdef enum:
    L63 = 0


cdef inline void _field(int kind, const double* p, const double* x,
                        double* out, Py_ssize_t d) noexcept nogil:
    cdef Py_ssize_t k, km1, km2, kp1
    if kind == L63:
        out[0] = p[0] * (x[1] - x[0])
        out[1] = x[0] * (p[1] - x[2]) - x[1]
        out[2] = x[0] * x[1] - p[2] * x[2]
        return
    for k in range(d):
        km1 = k - 1 if k >= 1 else d - 1
        km2 = k - 2 if k >= 2 else k - 2 + d
        kp1 = k + 1 if k + 1 < d else 0
        out[k] = (x[kp1] - x[km2]) * x[km1] - x[k] + p[0]


cdef inline void _jac_apply(int kind, const double* p, const double* x,
                            const double* B, double* out,
                            Py_ssize_t d, Py_ssize_t m) noexcept nogil:
    # B and out are row-major d x m
    cdef Py_ssize_t k, j, km1, km2, kp1
    cdef double a, c
    if kind == L63:
        for j in range(m):
            out[j] = p[0] * (B[m + j] - B[j])
            out[m + j] = (p[1] - x[2]) * B[j] - B[m + j] - x[0] * B[2 * m + j]
            out[2 * m + j] = x[1] * B[j] + x[0] * B[m + j] - p[2] * B[2 * m + j]
        return
    for k in range(d):
        km1 = k - 1 if k >= 1 else d - 1
        km2 = k - 2 if k >= 2 else k - 2 + d
        kp1 = k + 1 if k + 1 < d else 0
        a = x[kp1] - x[km2]
        c = x[km1]
        for j in range(m):
            out[k * m + j] = (a * B[km1 * m + j]
                              + c * (B[kp1 * m + j] - B[km2 * m + j])
                              - B[k * m + j])


cdef int _rk4_inplace(int kind, const double* p, double* x, Py_ssize_t d,
                      Py_ssize_t n_steps, double dt) noexcept nogil:
    cdef double* buf = <double*> malloc(5 * d * sizeof(double))
    if buf == NULL:
        return -1
    cdef double* k1 = buf
    cdef double* k2 = buf + d
    cdef double* k3 = buf + 2 * d
    cdef double* k4 = buf + 3 * d
    cdef double* xt = buf + 4 * d
    cdef double h = 0.5 * dt
    cdef double c = dt / 6.0
    cdef Py_ssize_t s, i
    for s in range(n_steps):
        _field(kind, p, x, k1, d)
        for i in range(d):
            xt[i] = x[i] + h * k1[i]
        _field(kind, p, xt, k2, d)
        for i in range(d):
            xt[i] = x[i] + h * k2[i]
        _field(kind, p, xt, k3, d)
        for i in range(d):
            xt[i] = x[i] + dt * k3[i]
        _field(kind, p, xt, k4, d)
        for i in range(d):
            x[i] = x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    free(buf)
    return 0


cdef int _tangent_inplace(int kind, const double* p, double* x, double* B,
                          Py_ssize_t d, Py_ssize_t m,
                          Py_ssize_t n_steps, double dt) noexcept nogil:
    cdef Py_ssize_t dm = d * m
    cdef double* buf = <double*> malloc((5 * d + 5 * dm) * sizeof(double))
    if buf == NULL:
        return -1
    cdef double* k1 = buf
    cdef double* k2 = buf + d
    cdef double* k3 = buf + 2 * d
    cdef double* k4 = buf + 3 * d
    cdef double* xt = buf + 4 * d
    cdef double* K1 = buf + 5 * d
    cdef double* K2 = K1 + dm
    cdef double* K3 = K2 + dm
    cdef double* K4 = K3 + dm
    cdef double* Bt = K4 + dm
    cdef double h = 0.5 * dt
    cdef double c = dt / 6.0
    cdef Py_ssize_t s, i
    for s in range(n_steps):
        _field(kind, p, x, k1, d)
        _jac_apply(kind, p, x, B, K1, d, m)
        for i in range(d):
            xt[i] = x[i] + h * k1[i]
        for i in range(dm):
            Bt[i] = B[i] + h * K1[i]
        _field(kind, p, xt, k2, d)
        _jac_apply(kind, p, xt, Bt, K2, d, m)
        for i in range(d):
            xt[i] = x[i] + h * k2[i]
        for i in range(dm):
            Bt[i] = B[i] + h * K2[i]
        _field(kind, p, xt, k3, d)
        _jac_apply(kind, p, xt, Bt, K3, d, m)
        for i in range(d):
            xt[i] = x[i] + dt * k3[i]
        for i in range(dm):
            Bt[i] = B[i] + dt * K3[i]
        _field(kind, p, xt, k4, d)
        _jac_apply(kind, p, xt, Bt, K4, d, m)
        for i in range(d):
            x[i] = x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(dm):
            B[i] = B[i] + c * (K1[i] + 2.0 * K2[i] + 2.0 * K3[i] + K4[i])
    free(buf)
    return 0


def rk4(int kind, params, x, Py_ssize_t n_steps, double dt):
    """Advance a state (or an ``N x d`` stack of states) by ``n_steps`` RK4 steps."""
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    arr = np.array(x, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] X = arr.reshape(-1, arr.shape[arr.ndim - 1])
    cdef Py_ssize_t N = X.shape[0], d = X.shape[1], r
    cdef int err = 0
    with nogil:
        for r in range(N):
            err |= _rk4_inplace(kind, &p[0], &X[r, 0], d, n_steps, dt)
    if err:
        raise MemoryError()
    return arr


def integrate(int kind, params, x0, Py_ssize_t n_saves,
              Py_ssize_t steps_per_save, double dt):
    """States at every ``steps_per_save`` steps, ``x0`` included as row 0."""
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef Py_ssize_t d = len(x0), j, i
    out = np.empty((n_saves + 1, d))
    cdef double[:, ::1] O = out
    cdef double[::1] x = np.array(x0, dtype=np.float64, copy=True)
    cdef int err = 0
    O[0, :] = x
    with nogil:
        for j in range(1, n_saves + 1):
            err |= _rk4_inplace(kind, &p[0], &x[0], d, steps_per_save, dt)
            for i in range(d):
                O[j, i] = x[i]
    if err:
        raise MemoryError()
    return out


def tangent_rk4(int kind, params, x, B, Py_ssize_t n_steps, double dt):
    """Jointly integrate ``dx/dt = f(x)`` and ``dB/dt = J(x) B``."""
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    xa = np.array(x, dtype=np.float64, copy=True)
    Ba = np.array(B, dtype=np.float64, order="C", copy=True)
    cdef double[::1] xv = xa
    cdef double[:, ::1] Bv = Ba
    cdef Py_ssize_t d = Bv.shape[0], m = Bv.shape[1]
    cdef int err = 0
    if m == 0 or d == 0:
        return xa, Ba
    with nogil:
        err = _tangent_inplace(kind, &p[0], &xv[0], &Bv[0, 0], d, m, n_steps, dt)
    if err:
        raise MemoryError()
    return xa, Ba
