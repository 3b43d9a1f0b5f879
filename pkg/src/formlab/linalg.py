"""Small linear-algebra helpers shared across modules."""
import numpy as np
import scipy.sparse as sp


def richardson(coarse, fine, ratio=2.0, order=2):
    """Richardson extrapolation of values computed at spacings h and h/ratio."""
    coarse = np.asarray(coarse, dtype=float)
    fine = np.asarray(fine, dtype=float)
    f = ratio ** order
    return (f * fine - coarse) / (f - 1.0)


def is_tridiagonal(A):
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return True
    return bool(np.all(np.abs(A.row - A.col) <= 1))


def gershgorin_lower(A):
    """Lower bound on the spectrum of a symmetric (sparse) matrix."""
    A = sp.csr_matrix(A)
    d = A.diagonal()
    radius = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - radius))


def lanczos(matvec, n, steps, v0=None, seed=0, reorthogonalize=True):
    """Lanczos tridiagonalization with optional full reorthogonalization.

    Returns (alpha, beta, Q) where the Krylov basis Q has shape (n, k)
    and k <= steps (early exit on invariant subspace).
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) if v0 is None else np.array(v0, dtype=float)
    v /= np.linalg.norm(v)
    Q = np.zeros((n, steps))
    alpha = np.zeros(steps)
    beta = np.zeros(steps)
    q_prev = np.zeros(n)
    b = 0.0
    k = 0
    for k in range(steps):
        Q[:, k] = v
        w = matvec(v) - b * q_prev
        alpha[k] = v @ w
        w -= alpha[k] * v
        if reorthogonalize:
            # two passes of classical Gram-Schmidt keep Q orthonormal
            for _ in range(2):
                w -= Q[:, : k + 1] @ (Q[:, : k + 1].T @ w)
        b = np.linalg.norm(w)
        beta[k] = b
        if b < 1e-14 * max(1.0, abs(alpha[k])):
            k += 1
            return alpha[:k], beta[: k - 1], Q[:, :k]
        q_prev = v
        v = w / b
    k = steps
    return alpha[:k], beta[: k - 1], Q[:, :k]


def lanczos_extreme_estimates(A, steps=20, seed=0):
    """Ritz estimates (min, max) of a symmetric matrix after ``steps`` iterations."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    steps = min(steps, n)
    a, b, _ = lanczos(A.dot, n, steps, seed=seed)
    T = np.diag(a) + np.diag(b, 1) + np.diag(b, -1)
    ev = np.linalg.eigvalsh(T)
    return float(ev[0]), float(ev[-1])
