"""Eigensolvers, shooting through point interactions, growth rates and spectrum scans."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math

import numpy as np
import scipy.integrate as si
import scipy.linalg as sla
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from formlab import kernels
from formlab import config
from formlab.errors import (ConvergenceError, DegenerateInputError, DomainError,
                            SizeError)
from formlab.linalg import gershgorin_lower, is_tridiagonal

CHUNK = 256


# ------------------------------------------------------------------ eigenpairs


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray  # normalized in l^2(m)
    residual: float = 0.0


def _fix_sign(w):
    s = w.sum()
    if abs(s) < 1e-8 * np.abs(w).sum():
        s = w[np.argmax(np.abs(w) > 1e-8 * np.abs(w).max())]
    return w if s >= 0 else -w


def _shift_invert(S, k, tol):
    """ARPACK Lanczos on (S - sigma)^{-1} with sigma below the spectrum."""
    n = S.shape[0]
    sigma = gershgorin_lower(S) - 1.0
    lu = spla.splu((S - sigma * sp.identity(n)).tocsc())
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    v0 = np.random.default_rng(12345).standard_normal(n)
    theta, W = spla.eigsh(op, k=k, which="LA", v0=v0, ncv=min(n, max(2 * k + 1, 40)),
                          tol=min(tol, 1e-12), maxiter=10 * n)
    lams = np.array([w @ (S @ w) for w in W.T])
    return lams, W, lu


def eig_smallest(form, k=1, tol=None):
    """The k smallest eigenpairs of H = M^{-1}(K + diag p)."""
    tol = config.TOL.eig_residual if tol is None else tol
    n = form.n
    if not 1 <= k <= n:
        raise SizeError(f"k must be in [1, {n}], got {k}")
    S = form.symmetric_matrix()
    if abs(S - S.T).max() > 1e-12 * max(abs(S).max(), 1.0):
        raise DomainError("form matrix is not symmetric")
    if is_tridiagonal(S) and n <= config.TOL.dense_tridiagonal_max:
        d = S.diagonal()
        e = S.diagonal(1)
        lams, W = sla.eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1))
    elif n <= config.TOL.dense_general_max:
        lams, W = sla.eigh(S.toarray(), subset_by_index=(0, k - 1))
    else:
        lams, W, lu = _shift_invert(S, k, tol)
        order = np.argsort(lams)
        lams, W = lams[order], W[:, order]
        # Rayleigh-quotient polish for any pair short of the residual target
        ident = sp.identity(n, format="csc")
        for j in range(k):
            for _ in range(4):
                r = np.linalg.norm(S @ W[:, j] - lams[j] * W[:, j])
                if r <= tol * (abs(lams[j]) + 1):
                    break
                shift = lams[j] * (1 + 1e-13) + 1e-13
                v = spla.splu((S - shift * ident).tocsc()).solve(W[:, j])
                v -= W[:, :j] @ (W[:, :j].T @ v)
                W[:, j] = v / np.linalg.norm(v)
                lams[j] = W[:, j] @ (S @ W[:, j])
    norm_s = float(abs(S).sum(axis=1).max())
    out = []
    sq = np.sqrt(form.m)
    for j in range(k):
        w = _fix_sign(W[:, j])
        r = float(np.linalg.norm(S @ w - lams[j] * w))
        if r > tol * (abs(lams[j]) + 1) + 100 * np.finfo(float).eps * norm_s:
            raise ConvergenceError(f"eigenpair {j} residual {r:.3e} above tolerance")
        out.append(EigenPair(float(lams[j]), w / sq, r))
    return out


def sign_changes(values, rel=1e-10):
    """Sign changes of a sampled function, ignoring entries below ``rel`` of its max."""
    v = np.asarray(values, dtype=float)
    thresh = rel * np.abs(v).max() if v.size else 0.0
    s = np.sign(v[np.abs(v) > thresh])
    return int(np.count_nonzero(s[1:] != s[:-1]))


# ------------------------------------------------------------- shooting / ODE


@dataclass(frozen=True, eq=False)
class GeneralizedSolution:
    """A sampled solution of -u'' + V u + sum w delta u = lam u.

    Stored values are ``values * exp(log_scale)``; ``log_scale`` is
    constant on each inter-atom piece, so large growth never overflows.
    ``atom_data`` rows are (x, u, u'_left, u'_right, weight) in true scale.
    """
    lam: float
    x: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    log_scale: np.ndarray
    atom_data: tuple
    sign_changes: int
    log_norm_start: float
    log_norm_end: float

    @property
    def u(self):
        return self.values * np.exp(self.log_scale)

    @property
    def du(self):
        return self.derivs * np.exp(self.log_scale)

    @property
    def growth(self):
        return self.log_norm_end - self.log_norm_start


def _cuts(measure, lo, hi):
    atoms = measure.atoms_in(lo, hi, closed=False)
    pts = {lo, hi, *measure.breakpoints_in(lo, hi), *(x for x, _ in atoms)}
    return sorted(pts), dict(atoms)


def integrate_solution(measure, lam, span, init, samples=2001, rtol=1e-10, atol=1e-12):
    """Shoot (u, u') = init from span[0] to span[1] through the measure.

    The density part is integrated with an adaptive Runge-Kutta 4(5)
    method; at atoms the derivative jumps by weight times the value.
    """
    lo, hi = map(float, span)
    if not lo < hi:
        raise DomainError("span must be increasing")
    init = np.asarray(init, dtype=float)
    if init.shape != (2,) or not np.all(np.isfinite(init)) or not math.isfinite(lam):
        raise DomainError("lam and init must be finite")
    n0 = float(np.hypot(*init))
    if n0 == 0:
        raise DegenerateInputError("init must be nonzero")
    cuts, atoms = _cuts(measure, lo, hi)
    sample = np.union1d(np.linspace(lo, hi, samples), cuts)
    state = init / n0
    log_acc = math.log(n0)

    def rhs(t, y):
        q = float(measure.V(t)) - lam
        return [y[1], q * y[0]]

    xs, us, ds, ls = [], [], [], []
    atom_data = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        nrm = float(np.hypot(*state))
        state = state / nrm
        log_acc += math.log(nrm)
        pts = sample[(sample >= a) & (sample <= b)]
        if measure.has_density:
            if not np.all(np.isfinite(measure.V(pts))):
                raise DomainError(f"density is not finite on [{a}, {b}]")
            sol = si.solve_ivp(rhs, (a, b), state, method="RK45", t_eval=pts,
                               rtol=rtol, atol=atol)
            if not sol.success:
                raise ConvergenceError(sol.message)
            Y = sol.y
            end = Y[:, -1]
        else:
            k = np.sqrt(complex(lam))
            t = pts - a
            if abs(lam) < 1e-14:
                Y = np.vstack([state[0] + state[1] * t, np.full_like(t, state[1])])
            else:
                c = np.cos(k * t).real
                sn = (np.sin(k * t) / k).real
                ds_ = (-k * np.sin(k * t)).real
                Y = np.vstack([c * state[0] + sn * state[1], ds_ * state[0] + c * state[1]])
            end = Y[:, -1]
        xs.append(pts)
        us.append(Y[0])
        ds.append(Y[1])
        ls.append(np.full(pts.shape, log_acc))
        state = np.array(end, dtype=float)
        if b in atoms:
            w = atoms[b]
            left = state[1]
            state = np.array([state[0], state[1] + w * state[0]])
            scale = math.exp(log_acc)
            atom_data.append((b, state[0] * scale, left * scale, state[1] * scale, w))
    x = np.concatenate(xs)
    vals = np.concatenate(us)
    der = np.concatenate(ds)
    lsc = np.concatenate(ls)
    # drop duplicated cut nodes (keep the right-piece copy: derivative after the jump)
    keep = np.ones(x.size, bool)
    keep[:-1] = x[1:] != x[:-1]
    log_end = log_acc + math.log(float(np.hypot(*state)))
    return GeneralizedSolution(
        float(lam), x[keep], vals[keep], der[keep], lsc[keep], tuple(atom_data),
        sign_changes(vals[keep], rel=0.0),
        math.log(n0), log_end,
    )


# ----------------------------------------------------------- transfer matrices


@dataclass(frozen=True, eq=False)
class Chain:
    """Segments of constant coefficient with derivative jumps at nodes.

    ``w[k]`` is applied at the right end of segment ``k``.
    """
    x: np.ndarray
    dx: np.ndarray
    V: np.ndarray
    w: np.ndarray

    @property
    def nseg(self):
        return self.dx.size


def build_chain(measure, lo, hi, cell_max=None, include_end_atoms=False):
    cell_max = config.TOL.cell_max if cell_max is None else cell_max
    cuts, atoms = _cuts(measure, lo, hi)
    xs = [np.array([lo])]
    for a, b in zip(cuts[:-1], cuts[1:]):
        if measure.piecewise_constant or not measure.has_density:
            nodes = np.array([b])
        else:
            m = max(1, math.ceil((b - a) / cell_max - 1e-9))
            nodes = a + (b - a) * np.arange(1, m + 1) / m
            nodes[-1] = b
        xs.append(nodes)
    x = np.concatenate(xs)
    dx = np.diff(x)
    V = measure.V(0.5 * (x[:-1] + x[1:]))
    if not np.all(np.isfinite(V)):
        raise DomainError("density is not finite on the chain")
    node_jump = np.zeros(x.size)
    for xa, wa in atoms.items():
        node_jump[np.searchsorted(x, xa)] += wa
    if include_end_atoms:
        for xa, wa in measure.atoms_in(lo, hi):
            if xa in (lo, hi):
                node_jump[0 if xa == lo else -1] += wa
    w = node_jump[1:].copy()
    if node_jump[0] != 0.0:
        x = np.concatenate([[lo], x])
        dx = np.concatenate([[0.0], dx])
        V = np.concatenate([[0.0], V])
        w = np.concatenate([[node_jump[0]], w])
    return Chain(x, dx, V, w)


def reverse_chain(chain):
    """The chain traversed from right to left, in the reflected coordinate.

    States map as (u, u') -> (u, -u'); jump weights keep their sign.  A
    jump at the original right end is dropped (it lies at the new start).
    """
    n = chain.nseg
    w = np.zeros(n)
    w[:-1] = chain.w[: n - 1][::-1]
    return Chain(chain.x[::-1].copy(), chain.dx[::-1].copy(), chain.V[::-1].copy(), w)


def split_chain(chain, k):
    """Chains left and right of node k; the jump at node k stays on the left."""
    return (Chain(chain.x[: k + 1], chain.dx[:k], chain.V[:k], chain.w[:k]),
            Chain(chain.x[k:], chain.dx[k:], chain.V[k:], chain.w[k:]))


def sigma_max(mats):
    """Largest singular value of a stack of 2x2 matrices."""
    a, b, c, d = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 0], mats[:, 1, 1]
    f = a * a + b * b + c * c + d * d
    det = np.abs(a * d - b * c)
    return np.sqrt(0.5 * (f + np.sqrt(np.maximum(f * f - 4 * det * det, 0.0))))


def _in_chunks(fn, lams, threads):
    lams = np.asarray(lams, dtype=float)
    chunks = [lams[i:i + CHUNK] for i in range(0, lams.size, CHUNK)]
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return parts


def transfer_matrices(chain, lams, threads=1):
    parts = _in_chunks(lambda c: kernels.transfer_products(chain.dx, chain.V, chain.w, c), lams, threads)
    if not parts:
        return np.empty((0, 2, 2)), np.empty(0)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def growth_rates(measure, lams, L, cell_max=None, threads=1, chain=None):
    if not L > 0:
        raise DomainError("L must be positive")
    chain = chain or build_chain(measure, -L, L, cell_max)
    mats, logs = transfer_matrices(chain, lams, threads)
    g = (np.log(sigma_max(mats)) + logs) / (2 * L)
    return np.maximum(g, 0.0)


def growth_rate(measure, lam, L, cell_max=None):
    """(1/2L) log of the largest singular value of the transfer matrix across [-L, L]."""
    return float(growth_rates(measure, [lam], L, cell_max)[0])


# ------------------------------------------------------------------ Shnol scans


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    lams: np.ndarray
    gamma: np.ndarray
    eps: float
    L: float
    detected: np.ndarray
    intervals: tuple
    bound_states: tuple = ()
    reference_bands: tuple = None
    reference_eigenvalues: tuple = None
    symmetric_difference: float = None
    edge_errors: tuple = None  # (reference edge, distance in grid cells)

    @property
    def step(self):
        return float(np.median(np.diff(self.lams))) if self.lams.size > 1 else 0.0


def _runs(mask, lams):
    out = []
    i = 0
    n = mask.size
    while i < n:
        if mask[i]:
            j = i
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((float(lams[i]), float(lams[j])))
            i = j + 1
        else:
            i += 1
    return tuple(out)


def _measure(intervals):
    return sum(max(0.0, b - a) for a, b in intervals)


def _intersect(A, B):
    out = []
    for a0, a1 in A:
        for b0, b1 in B:
            lo, hi = max(a0, b0), min(a1, b1)
            if hi > lo:
                out.append((lo, hi))
    return out


def symmetric_difference(A, B):
    return _measure(A) + _measure(B) - 2 * _measure(_intersect(A, B))


def decay_wronskian(measure, lams, L, cell_max=None, chain=None):
    """Normalized Wronskian of the solutions decaying at -L and at +L.

    Only meaningful where V(+-L) - lam > 0; NaN elsewhere.  Zeros are
    eigenvalues of the problem on [-L, L] with decaying ends.
    """
    chain = chain or build_chain(measure, -L, L, cell_max)
    lams = np.asarray(lams, dtype=float)
    qL = measure.V(np.array([-L]))[0] - lams
    qR = measure.V(np.array([L]))[0] - lams
    out = np.full(lams.shape, np.nan)
    ok = (qL > 0) & (qR > 0)
    if not ok.any():
        return out
    k = int(np.searchsorted(chain.x, 0.5 * (chain.x[0] + chain.x[-1])))
    k = min(max(k, 1), chain.nseg - 1) if chain.nseg > 1 else 1
    left, right = split_chain(chain, k)
    back = reverse_chain(right)
    lam_ok = lams[ok]
    TL, _ = kernels.transfer_products(left.dx, left.V, left.w, lam_ok)
    TR, _ = kernels.transfer_products(back.dx, back.V, back.w, lam_ok)
    sL = np.sqrt(qL[ok])
    sR = np.sqrt(qR[ok])
    uL = TL[:, 0, 0] + TL[:, 0, 1] * sL
    pL = TL[:, 1, 0] + TL[:, 1, 1] * sL
    # decaying-at-+L data is (1, +sR) in the reflected frame; flip the derivative back
    uR = TR[:, 0, 0] + TR[:, 0, 1] * sR
    pR = -(TR[:, 1, 0] + TR[:, 1, 1] * sR)
    W = uL * pR - pL * uR
    out[ok] = W / (np.hypot(uL, pL) * np.hypot(uR, pR))
    return out


def shnol_scan(measure, lam_grid, L, eps=None, reference=None, threads=1, cell_max=None,
               bound_states=True):
    """Growth-rate scan of the spectrum on an increasing energy grid.

    ``reference`` may be a sequence of (lo, hi) bands or a dict with keys
    ``bands`` and ``eigenvalues``.
    """
    lams = np.asarray(lam_grid, dtype=float)
    if lams.size == 0:
        raise DegenerateInputError("energy grid is empty")
    if np.any(np.diff(lams) <= 0):
        raise DomainError("energy grid must be increasing")
    eps = config.TOL.shnol_eps_factor / L if eps is None else float(eps)
    if not eps > 0:
        raise DomainError("eps must be positive")
    chain = build_chain(measure, -L, L, cell_max)
    gamma = growth_rates(measure, lams, L, threads=threads, chain=chain)
    detected = gamma <= eps
    found = []
    if bound_states:
        W = decay_wronskian(measure, lams, L, chain=chain)
        for i in range(lams.size - 1):
            w0, w1 = W[i], W[i + 1]
            if not (np.isfinite(w0) and np.isfinite(w1)) or w0 * w1 > 0:
                continue

            def f(t):
                return decay_wronskian(measure, [t], L, chain=chain)[0]

            root = lams[i] if w0 == 0 else lams[i + 1] if w1 == 0 else so.brentq(f, lams[i], lams[i + 1], xtol=1e-13)
            j = i if abs(root - lams[i]) <= abs(root - lams[i + 1]) else i + 1
            if not detected[max(j - 1, 0): j + 2].any():
                detected[j] = True
            found.append(float(root))
    intervals = _runs(detected, lams)
    bands = eigs = None
    sym = errs = None
    if reference is not None:
        if isinstance(reference, dict):
            bands = tuple(tuple(b) for b in reference.get("bands", ()))
            eigs = tuple(float(e) for e in reference.get("eigenvalues", ()))
        else:
            bands = tuple(tuple(b) for b in reference)
            eigs = ()
        lo, hi = float(lams[0]), float(lams[-1])
        clipped = [(max(a, lo), min(b, hi)) for a, b in bands if min(b, hi) >= max(a, lo)]
        sym = symmetric_difference(list(intervals), clipped)
        step = float(np.median(np.diff(lams))) if lams.size > 1 else 1.0
        ends = sorted({e for iv in intervals for e in iv})
        errs = []
        edges = [e for a, b in clipped for e in (a, b)] + [e for e in eigs if lo <= e <= hi]
        for e in edges:
            d = min((abs(e - t) for t in ends), default=math.inf)
            errs.append((float(e), d / step))
        errs = tuple(errs)
    return SpectrumReport(lams, gamma, eps, float(L), detected, intervals, tuple(found),
                          bands, eigs, sym, errs)
