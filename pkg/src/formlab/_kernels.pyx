# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled transfer-matrix kernels.

Each segment k of a 1D chain carries a length dx[k], a constant
coefficient q = V[k] - lam of the equation u'' = q u, and a derivative
jump w[k] applied at the segment's right end (u'_+ = u'_- + w u).
Mirrors formlab._kernels_py exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cosh, sinh, cos, sin, exp, log, fabs

cdef double SMALL_Z = 1e-8
cdef double SCALE_AT = 20.0
cdef double RENORM = 1e64


cdef inline void _propagator(double q, double d, double* c, double* sn,
                             double* r2, double* lg) noexcept nogil:
    """Entries of the (u, u') propagator, optionally scaled by exp(-lg)."""
    cdef double z = q * d * d
    cdef double s, e
    lg[0] = 0.0
    if fabs(z) < SMALL_Z:
        c[0] = 1.0 + 0.5 * z
        sn[0] = d * (1.0 + z / 6.0)
        r2[0] = q * d * (1.0 + z / 6.0)
    elif q > 0.0:
        s = sqrt(q)
        if s * d > SCALE_AT:
            e = exp(-2.0 * s * d)
            c[0] = 0.5 * (1.0 + e)
            sn[0] = 0.5 * (1.0 - e) / s
            r2[0] = 0.5 * s * (1.0 - e)
            lg[0] = s * d
        else:
            c[0] = cosh(s * d)
            sn[0] = sinh(s * d) / s
            r2[0] = s * sinh(s * d)
    else:
        s = sqrt(-q)
        c[0] = cos(s * d)
        sn[0] = sin(s * d) / s
        r2[0] = -s * sin(s * d)


def transfer_products(double[::1] dx, double[::1] V, double[::1] w, double[::1] lams):
    """Return (mats, logs): T(lam) = exp(logs) * mats for every lam."""
    cdef Py_ssize_t nseg = dx.shape[0], nl = lams.shape[0]
    cdef Py_ssize_t i, k
    mats_np = np.empty((nl, 2, 2))
    logs_np = np.zeros(nl)
    cdef double[:, :, ::1] mats = mats_np
    cdef double[::1] logs = logs_np
    cdef double a, b, cc, dd, na, nb, nc, nd, c, sn, r2, lg, m, acc
    with nogil:
        for i in range(nl):
            a = 1.0; b = 0.0; cc = 0.0; dd = 1.0
            acc = 0.0
            for k in range(nseg):
                if dx[k] > 0.0:
                    _propagator(V[k] - lams[i], dx[k], &c, &sn, &r2, &lg)
                    na = c * a + sn * cc
                    nb = c * b + sn * dd
                    nc = r2 * a + c * cc
                    nd = r2 * b + c * dd
                    a = na; b = nb; cc = nc; dd = nd
                    acc += lg
                if w[k] != 0.0:
                    cc = cc + w[k] * a
                    dd = dd + w[k] * b
                m = fabs(a)
                if fabs(b) > m: m = fabs(b)
                if fabs(cc) > m: m = fabs(cc)
                if fabs(dd) > m: m = fabs(dd)
                if m > RENORM:
                    a /= m; b /= m; cc /= m; dd /= m
                    acc += log(m)
            mats[i, 0, 0] = a; mats[i, 0, 1] = b
            mats[i, 1, 0] = cc; mats[i, 1, 1] = dd
            logs[i] = acc
    return mats_np, logs_np


def shoot_frame(double[::1] dx, double[::1] V, double[::1] w, double lam, double[:, ::1] F0):
    """Propagate the 2x2 frame F0 (columns = initial (u, u')) across all segments.

    Returns (U, D, logs) with U[j], D[j] the frame's values / right
    derivatives at node j (nodes = segment ends, node 0 = start), all
    sharing the common scale exp(logs[j]).
    """
    cdef Py_ssize_t nseg = dx.shape[0]
    cdef Py_ssize_t k
    U_np = np.empty((nseg + 1, 2))
    D_np = np.empty((nseg + 1, 2))
    L_np = np.zeros(nseg + 1)
    cdef double[:, ::1] U = U_np
    cdef double[:, ::1] D = D_np
    cdef double[::1] L = L_np
    cdef double u1 = F0[0, 0], u2 = F0[0, 1], p1 = F0[1, 0], p2 = F0[1, 1]
    cdef double c, sn, r2, lg, m, acc = 0.0, t1, t2
    with nogil:
        U[0, 0] = u1; U[0, 1] = u2; D[0, 0] = p1; D[0, 1] = p2
        for k in range(nseg):
            if dx[k] > 0.0:
                _propagator(V[k] - lam, dx[k], &c, &sn, &r2, &lg)
                t1 = c * u1 + sn * p1
                p1 = r2 * u1 + c * p1
                u1 = t1
                t2 = c * u2 + sn * p2
                p2 = r2 * u2 + c * p2
                u2 = t2
                acc += lg
            if w[k] != 0.0:
                p1 = p1 + w[k] * u1
                p2 = p2 + w[k] * u2
            m = fabs(u1)
            if fabs(u2) > m: m = fabs(u2)
            if fabs(p1) > m: m = fabs(p1)
            if fabs(p2) > m: m = fabs(p2)
            if m > RENORM:
                u1 /= m; u2 /= m; p1 /= m; p2 /= m
                acc += log(m)
            U[k + 1, 0] = u1; U[k + 1, 1] = u2
            D[k + 1, 0] = p1; D[k + 1, 1] = p2
            L[k + 1] = acc
    return U_np, D_np, L_np


def ldl_inertia(double[::1] diag, double[::1] off, double[::1] mass, double lam):
    """Number of negative pivots of (T - lam*M) for symmetric tridiagonal T."""
    cdef Py_ssize_t n = diag.shape[0], i
    cdef long count = 0
    cdef double d, prev = 1.0, tiny = 1e-300
    with nogil:
        for i in range(n):
            d = diag[i] - lam * mass[i]
            if i > 0:
                d = d - off[i - 1] * off[i - 1] / prev
            if d == 0.0:
                d = tiny
            if d < 0.0:
                count += 1
            prev = d
    return count
