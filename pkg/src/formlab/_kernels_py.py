"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Same arithmetic, same segment conventions; vectorized over the energy
grid where the compiled version loops.
"""
import math

import numpy as np

SMALL_Z = 1e-8
SCALE_AT = 20.0
RENORM = 1e64


def _propagator(q, d):
    """Scalar propagator entries (c, sn, r2, lg) for u'' = q u over length d."""
    z = q * d * d
    if abs(z) < SMALL_Z:
        return 1.0 + 0.5 * z, d * (1.0 + z / 6.0), q * d * (1.0 + z / 6.0), 0.0
    if q > 0.0:
        s = math.sqrt(q)
        if s * d > SCALE_AT:
            e = math.exp(-2.0 * s * d)
            return 0.5 * (1.0 + e), 0.5 * (1.0 - e) / s, 0.5 * s * (1.0 - e), s * d
        return math.cosh(s * d), math.sinh(s * d) / s, s * math.sinh(s * d), 0.0
    s = math.sqrt(-q)
    return math.cos(s * d), math.sin(s * d) / s, -s * math.sin(s * d), 0.0


def _propagator_vec(q, d):
    z = q * d * d
    c = np.empty_like(q)
    sn = np.empty_like(q)
    r2 = np.empty_like(q)
    lg = np.zeros_like(q)

    small = np.abs(z) < SMALL_Z
    c[small] = 1.0 + 0.5 * z[small]
    sn[small] = d * (1.0 + z[small] / 6.0)
    r2[small] = q[small] * d * (1.0 + z[small] / 6.0)

    pos = (~small) & (q > 0.0)
    s = np.sqrt(np.abs(q))
    big = pos & (s * d > SCALE_AT)
    mid = pos & ~big
    e = np.exp(-2.0 * s[big] * d)
    c[big] = 0.5 * (1.0 + e)
    sn[big] = 0.5 * (1.0 - e) / s[big]
    r2[big] = 0.5 * s[big] * (1.0 - e)
    lg[big] = s[big] * d
    c[mid] = np.cosh(s[mid] * d)
    sn[mid] = np.sinh(s[mid] * d) / s[mid]
    r2[mid] = s[mid] * np.sinh(s[mid] * d)

    neg = (~small) & (q <= 0.0)
    c[neg] = np.cos(s[neg] * d)
    sn[neg] = np.sin(s[neg] * d) / s[neg]
    r2[neg] = -s[neg] * np.sin(s[neg] * d)
    return c, sn, r2, lg


def transfer_products(dx, V, w, lams):
    lams = np.asarray(lams, dtype=float)
    nl = lams.shape[0]
    a = np.ones(nl)
    b = np.zeros(nl)
    cc = np.zeros(nl)
    dd = np.ones(nl)
    acc = np.zeros(nl)
    for k in range(len(dx)):
        if dx[k] > 0.0:
            c, sn, r2, lg = _propagator_vec(V[k] - lams, dx[k])
            a, b, cc, dd = c * a + sn * cc, c * b + sn * dd, r2 * a + c * cc, r2 * b + c * dd
            acc += lg
        if w[k] != 0.0:
            cc = cc + w[k] * a
            dd = dd + w[k] * b
        m = np.maximum(np.maximum(np.abs(a), np.abs(b)), np.maximum(np.abs(cc), np.abs(dd)))
        hit = m > RENORM
        if hit.any():
            a[hit] /= m[hit]
            b[hit] /= m[hit]
            cc[hit] /= m[hit]
            dd[hit] /= m[hit]
            acc[hit] += np.log(m[hit])
    mats = np.empty((nl, 2, 2))
    mats[:, 0, 0] = a
    mats[:, 0, 1] = b
    mats[:, 1, 0] = cc
    mats[:, 1, 1] = dd
    return mats, acc


def shoot_frame(dx, V, w, lam, F0):
    nseg = len(dx)
    U = np.empty((nseg + 1, 2))
    D = np.empty((nseg + 1, 2))
    L = np.zeros(nseg + 1)
    u1, u2 = float(F0[0, 0]), float(F0[0, 1])
    p1, p2 = float(F0[1, 0]), float(F0[1, 1])
    U[0] = u1, u2
    D[0] = p1, p2
    acc = 0.0
    for k in range(nseg):
        if dx[k] > 0.0:
            c, sn, r2, lg = _propagator(V[k] - lam, dx[k])
            u1, p1 = c * u1 + sn * p1, r2 * u1 + c * p1
            u2, p2 = c * u2 + sn * p2, r2 * u2 + c * p2
            acc += lg
        if w[k] != 0.0:
            p1 = p1 + w[k] * u1
            p2 = p2 + w[k] * u2
        m = max(abs(u1), abs(u2), abs(p1), abs(p2))
        if m > RENORM:
            u1 /= m
            u2 /= m
            p1 /= m
            p2 /= m
            acc += math.log(m)
        U[k + 1] = u1, u2
        D[k + 1] = p1, p2
        L[k + 1] = acc
    return U, D, L


def ldl_inertia(diag, off, mass, lam):
    count = 0
    prev = 1.0
    for i in range(len(diag)):
        d = diag[i] - lam * mass[i]
        if i > 0:
            d = d - off[i - 1] * off[i - 1] / prev
        if d == 0.0:
            d = 1e-300
        if d < 0.0:
            count += 1
        prev = d
    return count
