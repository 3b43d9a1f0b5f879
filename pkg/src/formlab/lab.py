"""Executable experiments: positivity thresholds, spectral gaps, Caccioppoli ratios,
collar diagnostics, the Kronig-Penney oracle and the radial delta shell."""
from dataclasses import dataclass
import math

import numpy as np
import scipy.integrate as si
import scipy.linalg as sla
import scipy.optimize as so
import scipy.special as ss

from formlab import kernels
from formlab import config
from formlab.errors import (DegenerateInputError, DomainError, NoBracketError,
                            PreconditionError, SizeError)
from formlab.forms import (Grid1D, assemble_schrodinger_form, energy_measure,
                           interval_energy, interval_mass)
from formlab.solvers import (Chain, GeneralizedSolution, build_chain, eig_smallest,
                             reverse_chain)

# ---------------------------------------------------------- positive solutions


@dataclass(frozen=True, eq=False)
class APReport:
    lam: float
    verdict: str  # "positive" | "oscillate"
    window: tuple
    witness: GeneralizedSolution = None
    sign_change_at: float = None  # earliest first zero among swept solutions
    positive_angles: int = 0
    angles: int = 0


def _fine_chain(measure, lo, hi, cell_max):
    """Chain with segments no longer than cell_max, even on constant pieces."""
    base = build_chain(measure, lo, hi, cell_max)
    xs = [base.x[:1]]
    dx, V, w = [], [], []
    for k in range(base.nseg):
        d = base.dx[k]
        m = max(1, math.ceil(d / cell_max - 1e-9)) if d > 0 else 1
        xs.append(base.x[k] + d * np.arange(1, m + 1) / m)
        dx.extend([d / m] * m)
        V.extend([base.V[k]] * m)
        w.extend([0.0] * (m - 1) + [base.w[k]])
    return Chain(np.concatenate(xs), np.array(dx), np.array(V), np.array(w))


def _first_negative(vals, x):
    """Per column: None if no sign change, else x where the sign first flips."""
    ref = np.sign(vals[0])
    ref = np.where(ref == 0, np.sign(vals[1]), ref)
    bad = vals * ref < 0
    anyb = bad.any(axis=0)
    idx = np.argmax(bad, axis=0)
    return anyb, np.where(anyb, x[idx], np.nan), ref


def ap_check(measure, lam, window, angles=None, cell_max=None, chunk=90):
    """Look for a solution of (H - lam) u = 0 without sign change on ``window``.

    Sweeps initial data (cos t, sin t) at the left end over ``angles``
    directions, plus the least- and most-growing directions of the
    transfer matrix shot from either end.
    """
    angles = angles or config.TOL.ap_angles
    cell_max = cell_max or config.TOL.ap_cell_max
    lo, hi = map(float, window)
    if not lo < hi:
        raise DomainError("window must be a bounded interval")
    chain = _fine_chain(measure, lo, hi, cell_max)
    U, D, logs = kernels.shoot_frame(chain.dx, chain.V, chain.w, lam, np.eye(2))
    x = chain.x

    def witness(vals, ders, lg, sgn):
        return GeneralizedSolution(float(lam), x, sgn * vals, sgn * ders, lg, (), 0,
                                   float(np.log(np.hypot(vals[0], ders[0])) + lg[0]),
                                   float(np.log(np.hypot(vals[-1], ders[-1])) + lg[-1]))

    n_pos = 0
    first = math.inf
    best = None
    th = np.arange(angles) * math.pi / angles
    for s in range(0, angles, chunk):
        C = np.vstack([np.cos(th[s:s + chunk]), np.sin(th[s:s + chunk])])
        vals = U @ C
        bad, where, ref = _first_negative(vals, x)
        n_pos += int(np.count_nonzero(~bad))
        if bad.any():
            first = min(first, float(np.nanmin(where)))
        if best is None and (~bad).any():
            j = int(np.argmax(~bad))
            best = witness(vals[:, j], D @ C[:, j], logs, ref[j])

    # transfer-matrix singular directions, forward and backward
    T = np.array([[U[-1, 0], U[-1, 1]], [D[-1, 0], D[-1, 1]]])
    _, _, Vt = np.linalg.svd(T)
    back = reverse_chain(chain)
    Ub, Db, Lb = kernels.shoot_frame(back.dx, back.V, back.w, lam, np.eye(2))
    Tb = np.array([[Ub[-1, 0], Ub[-1, 1]], [Db[-1, 0], Db[-1, 1]]])
    _, _, Vbt = np.linalg.svd(Tb)
    cands = [(U @ v, D @ v, logs) for v in Vt] + \
            [((Ub @ v)[::-1], -(Db @ v)[::-1], Lb[::-1]) for v in Vbt]
    for vals, ders, lg in cands:
        bad, where, ref = _first_negative(vals[:, None], x)
        if not bad[0]:
            if best is None:
                best = witness(vals, ders, lg, ref[0])
        else:
            first = min(first, float(where[0]))
    verdict = "positive" if best is not None else "oscillate"
    return APReport(float(lam), verdict, (lo, hi), best,
                    None if verdict == "positive" or first == math.inf else first, n_pos, angles)


def ap_threshold(measure, window, tol=1e-3, lower=None, upper=None, angles=None, cell_max=None,
                 max_expand=60):
    """Bisection for the energy where positive solutions on ``window`` cease to exist."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    lo_w, hi_w = window

    def positive(lam):
        return ap_check(measure, lam, window, angles, cell_max).verdict == "positive"

    if lower is None:
        xs = np.linspace(lo_w, hi_w, 2001)
        vmin = float(np.min(measure.V(xs)))
        W = sum(-w for _, w in measure.atoms_in(lo_w, hi_w) if w < 0)
        lower = vmin - W * W / 4 - 1.0
    step = 1.0
    for _ in range(max_expand):
        if positive(lower):
            break
        lower -= step
        step *= 2
    else:
        raise NoBracketError("no energy with a positive solution found")
    upper = lower + 1.0 if upper is None else upper
    step = 1.0
    for _ in range(max_expand):
        if not positive(upper):
            break
        lower = upper
        upper += step
        step *= 2
    else:
        raise NoBracketError("no energy without positive solutions found")
    a, b = lower, upper
    while b - a > tol:
        mid = 0.5 * (a + b)
        if positive(mid):
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


# ------------------------------------------------------------------ spectral gap


@dataclass(frozen=True)
class GapReport:
    lam0: float
    lam1: float
    gap_formula: float
    gap_eigen: float
    agrees: bool


def _weighted_laplacian(form, phi):
    i, j, w, _ = form.edges()
    n = form.n
    ww = w * phi[i] * phi[j]
    L = np.zeros((n, n))
    np.add.at(L, (i, j), -ww)
    np.add.at(L, (j, i), -ww)
    d = np.zeros(n)
    np.add.at(d, i, ww)
    np.add.at(d, j, ww)
    L[np.diag_indices(n)] += d
    return L


def gap_via_gst(form, rtol=1e-8, ground=None):
    """Lowest spectral gap from the ground-state-transformed form.

    The gap is the infimum over u orthogonal to the ground state of
    sum w_ij phi_i phi_j (u_i/phi_i - u_j/phi_j)^2 / ||u||^2, evaluated on
    the orthogonal complement so the ground energy never enters.
    """
    pairs = eig_smallest(form, 2)
    lam0, lam1 = pairs[0].value, pairs[1].value
    phi = pairs[0].vector if ground is None else np.asarray(ground, dtype=float)
    if np.any(phi <= 0):
        raise PreconditionError("ground state is not strictly positive (reducible form?)")
    G = _weighted_laplacian(form, phi) / np.outer(phi, phi)
    s = 1.0 / np.sqrt(form.m)
    Gs = s[:, None] * G * s[None, :]
    q = np.sqrt(form.m) * phi
    q /= np.linalg.norm(q)
    # orthonormal basis of the complement of q from a full QR
    Q, _ = np.linalg.qr(np.column_stack([q, np.eye(form.n)[:, : form.n - 1]]))
    B = Q[:, 1:]
    P = B.T @ Gs @ B
    gap = float(sla.eigvalsh(0.5 * (P + P.T), subset_by_index=(0, 0))[0])
    ge = lam1 - lam0
    return GapReport(lam0, lam1, gap, ge, abs(gap - ge) <= rtol * abs(ge))


def gst_cauchy_schwarz(form, ground, u, nodes):
    """Both sides of the weighted lower bound for the transformed energy on ``nodes``.

    Returns (lhs, rhs) where
    lhs = min Phi^2 (sum sqrt(gamma_i) m_i)^2 / m(U) and
    rhs = sum Phi_i^2 gamma_i m_i, gamma the energy density of u/Phi.
    """
    phi = np.asarray(ground, dtype=float)
    if np.any(phi <= 0):
        raise PreconditionError("ground state must be strictly positive")
    nodes = np.asarray(nodes)
    dens = energy_measure(form, np.asarray(u) / phi)
    g = np.maximum(dens.values[nodes], 0.0)
    m = form.m[nodes]
    lhs = float(np.min(phi[nodes] ** 2) * np.sum(np.sqrt(g) * m) ** 2 / np.sum(m))
    rhs = float(np.sum(phi[nodes] ** 2 * g * m))
    return lhs, rhs


# ------------------------------------------------------------------- Caccioppoli


@dataclass(frozen=True)
class CaccioppoliReport:
    lam0: float
    E: tuple
    b_grid: tuple
    eigenvalues: tuple
    ratios: np.ndarray  # (k, len(b_grid)); NaN where flagged
    flagged: tuple  # (eigen index, b) pairs with vanishing denominator
    C_est: float


def caccioppoli_ratios(grid, u, E, b_grid, min_den=None):
    min_den = config.TOL.cacc_min_denominator if min_den is None else min_den
    e0, e1 = E
    gam = interval_energy(grid, u, e0, e1)
    out = []
    for b in b_grid:
        den = interval_mass(grid, u, e0 - b, e1 + b)
        out.append(np.nan if den < min_den else b * b * gam / den)
    return np.array(out)


def caccioppoli_probe(measure, window, k, E, b_grid, b0, n=4001):
    """b^2 times the energy on E over the mass on the b-neighbourhood, for k eigenfunctions."""
    lo, hi = window
    e0, e1 = E
    if not e0 <= e1:
        raise DomainError("E must be a closed interval")
    if e0 - b0 < lo or e1 + b0 > hi:
        raise DomainError("the b0-neighbourhood of E must lie inside the window")
    b_grid = tuple(float(b) for b in b_grid)
    if any(not 0 < b <= b0 for b in b_grid):
        raise DomainError("b values must lie in (0, b0]")
    grid = Grid1D(lo, hi, n)
    form = assemble_schrodinger_form(grid, measure)
    pairs = eig_smallest(form, k)
    R = np.array([caccioppoli_ratios(grid, p.vector, E, b_grid) for p in pairs])
    flagged = tuple((i, b_grid[j]) for i, j in zip(*np.nonzero(np.isnan(R))))
    C = float(np.nanmax(R)) if np.isfinite(R).any() else math.nan
    return CaccioppoliReport(pairs[-1].value, (e0, e1), b_grid, tuple(p.value for p in pairs),
                             R, flagged, C)


# ---------------------------------------------------------------- collar ratios


def _l2_on(x, u2, lo, hi):
    """Integral of a sampled nonnegative function over [lo, hi] (trapezoid, clipped)."""
    m = (x >= lo) & (x <= hi)
    if not m.any():
        return 0.0
    xs = np.concatenate([[lo], x[m], [hi]])
    ys = np.concatenate([[np.interp(lo, x, u2)], u2[m], [np.interp(hi, x, u2)]])
    return float(si.trapezoid(ys, xs))


def collar_ratio(solution, E_sequence, b):
    """||u on the inner b-collar of E_n|| / ||u on E_n|| for each interval E_n."""
    x = solution.x
    lg = solution.log_scale
    u2 = (solution.values * np.exp(lg - lg.max())) ** 2
    out = []
    for lo, hi in E_sequence:
        if lo < x[0] - 1e-12 or hi > x[-1] + 1e-12:
            raise DomainError("E_n must lie inside the solution's span")
        bulk = _l2_on(x, u2, lo, hi)
        if bulk <= 0:
            raise DegenerateInputError("bulk norm vanishes")
        w = min(b, 0.5 * (hi - lo))
        collar = _l2_on(x, u2, lo, lo + w) + _l2_on(x, u2, hi - w, hi)
        out.append(math.sqrt(collar / bulk))
    return np.array(out)


def collar_certificate(ratios, threshold=0.2):
    """Tail of the ratios nonincreasing and ending below ``threshold``."""
    r = np.asarray(ratios)
    tail = r[len(r) // 2:]
    return bool(np.all(np.diff(tail) <= 1e-12) and r[-1] < threshold)


# -------------------------------------------------------------- Kronig-Penney


def _sinc_term(lam, a):
    """sin(sqrt(lam) a) / sqrt(lam), analytic through lam = 0."""
    lam = np.asarray(lam, dtype=float)
    z = lam * a * a
    out = np.empty_like(lam)
    small = np.abs(z) < 1e-6
    out[small] = a * (1 - z[small] / 6 + z[small] ** 2 / 120)
    pos = ~small & (lam > 0)
    neg = ~small & (lam < 0)
    s = np.sqrt(np.abs(lam))
    out[pos] = np.sin(s[pos] * a) / s[pos]
    out[neg] = np.sinh(s[neg] * a) / s[neg]
    return out


def _cos_term(lam, a):
    lam = np.asarray(lam, dtype=float)
    s = np.sqrt(np.abs(lam))
    return np.where(lam >= 0, np.cos(s * a), np.cosh(s * a))


def kronig_penney_discriminant(lam, weight, period):
    """Half-trace of the one-period transfer matrix of a comb of point masses."""
    lam = np.asarray(lam, dtype=float)
    out = _cos_term(lam, period) + 0.5 * weight * _sinc_term(lam, period)
    return out if out.ndim else float(out)


def kronig_penney_bands(weight, period, lam_range, tol=None, samples=None):
    """Bands {lam : |discriminant| <= 1} inside lam_range, edges refined to ``tol``."""
    if not period > 0:
        raise DomainError("period must be positive")
    tol = tol or config.TOL.kp_edge_tol
    lo, hi = map(float, lam_range)
    samples = samples or max(20001, int((hi - lo) * 2000) + 1)
    lam = np.linspace(lo, hi, samples)

    def excess(t):
        return abs(kronig_penney_discriminant(t, weight, period)) - 1.0

    inside = np.abs(kronig_penney_discriminant(lam, weight, period)) <= 1.0

    def edge(a, b):
        fa, fb = excess(a), excess(b)
        if fa * fb < 0:
            return so.brentq(excess, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        ia = excess(a) <= 0
        while b - a > tol * 1e-2:
            m = 0.5 * (a + b)
            if (excess(m) <= 0) == ia:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    bands = []
    start = lo if inside[0] else None
    for i in range(samples - 1):
        if inside[i] != inside[i + 1]:
            e = edge(lam[i], lam[i + 1])
            if inside[i + 1]:
                start = e
            else:
                bands.append((start, e))
                start = None
    if start is not None:
        bands.append((start, hi))
    return bands


# -------------------------------------------------------------- radial delta shell


def radial_mesh(R, r_max, h=0.01, growth=1.02, uniform_to=None):
    """Nodes on [0, r_max]: uniform spacing near the shell, geometric growth beyond.

    A node is placed exactly at R.
    """
    if not 0 < R < r_max:
        raise DomainError("need 0 < R < r_max")
    m = max(2, round(R / h))
    hu = R / m
    uniform_to = max(2 * R, R + 1.0) if uniform_to is None else uniform_to
    uniform_to = min(uniform_to, r_max)
    n_u = max(m, math.floor(uniform_to / hu + 1e-9))
    nodes = list(hu * np.arange(n_u + 1))
    step = hu
    r = nodes[-1]
    while r < r_max:
        step *= growth
        r = min(r + step, r_max)
        if r_max - r < 0.5 * step:
            r = r_max
        nodes.append(r)
    return np.array(nodes)


@dataclass(frozen=True, eq=False)
class RadialSector:
    m: int
    diag: np.ndarray
    off: np.ndarray
    mass: np.ndarray
    r: np.ndarray  # unknown node radii

    def count_below(self, E):
        return kernels.ldl_inertia(self.diag, self.off, self.mass, E)

    def negative_eigenvalues(self, rtol=1e-10):
        n_neg = self.count_below(0.0)
        out = []
        for j in range(n_neg):
            lo = -1.0
            while self.count_below(lo) > j:
                lo *= 2
            # bisection on t = log(-E): count_below(-exp(t)) > j  <=>  E_j < -exp(t)
            a, b = math.log(-lo), math.log(1e-300)
            while a - b > rtol:
                t = 0.5 * (a + b)
                if self.count_below(-math.exp(t)) > j:
                    b = t
                else:
                    a = t
            out.append(-math.exp(0.5 * (a + b)))
        return out

    def eigenvalues_between(self, lo, hi):
        return self.count_below(hi) - self.count_below(lo)


def radial_sector(alpha, R, m, nodes):
    """Weighted radial form int (|f'|^2 + m^2 |f|^2 / r^2) r dr - alpha R |f(R)|^2 on P1 elements.

    Mass is lumped exactly (int r phi_i dr), the centrifugal term uses the
    exact lumped integral of phi_i / r.  Dirichlet at r_max; at r = 0
    Neumann for m = 0 and Dirichlet otherwise.
    """
    r = np.asarray(nodes, dtype=float)
    if r[0] != 0 or np.any(np.diff(r) <= 0):
        raise DomainError("radial nodes must start at 0 and increase")
    h = np.diff(r)
    i_R = int(np.argmin(np.abs(r - R)))
    hR = max(h[max(i_R - 1, 0)], h[min(i_R, h.size - 1)])
    if abs(r[i_R] - R) > hR or i_R in (0, r.size - 1):
        raise SizeError(f"no interior node within one cell of R={R}")
    n = r.size
    cond = (r[:-1] + r[1:]) / (2 * h)
    diag = np.zeros(n)
    diag[:-1] += cond
    diag[1:] += cond
    off = -cond
    mass = np.zeros(n)
    mass[:-1] += h * (2 * r[:-1] + r[1:]) / 6
    mass[1:] += h * (2 * r[1:] + r[:-1]) / 6
    if m:
        inv = np.zeros(n)
        rl, rr = r[:-1], r[1:]
        # int over [rl, rr] of phi_right / r and phi_left / r
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.log(rr / rl)
            right_part = np.where(rl > 0, 1 - rl / h * log_ratio, np.inf)
            left_part = np.where(rl > 0, rr / h * log_ratio - 1, np.inf)
        inv[1:] += right_part
        inv[:-1] += left_part
        diag = diag + m * m * inv
    diag[i_R] -= alpha * R
    keep = slice(1 if m else 0, n - 1)
    d = diag[keep]
    o = off[keep][:-1]
    return RadialSector(int(m), d.copy(), o.copy(), mass[keep].copy(), r[keep].copy())


@dataclass(frozen=True)
class DeltaShellReport:
    alpha: float
    R: float
    r_max: float
    sectors: dict  # m -> list of negative eigenvalues
    exact: dict  # m -> exact negative eigenvalue (or None)


def delta_shell_exact(alpha, R, m=0):
    """Bound state of -Laplacian - alpha delta on the circle |x| = R (full plane), sector m.

    Solves alpha R I_m(kR) K_m(kR) = 1 for k > 0; returns -k^2, or None when the
    sector has no bound state or its binding energy underflows a double.
    """
    def f(k):
        x = k * R
        return alpha * R * ss.ive(m, x) * ss.kve(m, x) - 1.0

    # I_m K_m decreases from 1/(2m) (m >= 1) or +inf (m = 0) to 0
    if m and alpha * R / (2 * m) <= 1:
        return None
    hi = 1.0
    while f(hi) > 0:
        hi *= 2
    lo = hi
    while f(lo) < 0:
        lo /= 2
        if lo < 1e-300:
            return None
    k = so.brentq(f, lo, hi, xtol=1e-300, rtol=1e-14)
    return -k * k


def delta_shell_radial(alpha, R, m_max, grid=None, r_max=None, nodes=None):
    """Negative eigenvalues of the delta-shell operator per angular momentum sector.

    ``grid`` may be a Grid1D on (0, r_max) or an increasing node array.
    """
    if not alpha > 0 or not R > 0:
        raise DomainError("alpha and R must be positive")
    if nodes is None:
        if isinstance(grid, Grid1D):
            if grid.a != 0:
                raise DomainError("radial grid must start at 0")
            nodes = grid.x
        elif grid is not None:
            nodes = np.asarray(grid, dtype=float)
        else:
            nodes = radial_mesh(R, r_max if r_max is not None else 40.0)
    nodes = np.asarray(nodes, dtype=float)
    if not R < nodes[-1]:
        raise DomainError("need R < r_max")
    sectors = {}
    exact = {}
    for m in range(m_max + 1):
        sectors[m] = radial_sector(alpha, R, m, nodes).negative_eigenvalues()
        exact[m] = delta_shell_exact(alpha, R, m)
    return DeltaShellReport(float(alpha), float(R), float(nodes[-1]), sectors, exact)
