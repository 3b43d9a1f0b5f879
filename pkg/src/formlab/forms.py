"""Discretized Dirichlet forms on 1D grids and graph meshes.

A :class:`DiscreteForm` stores the kinetic (stiffness) matrix ``K``, the
potential diagonal ``p`` and lumped mass weights ``m``.  The form is

    h[u, v] = sum_ij u_i (K + diag(p))_ij conj(v_j),

acting in the weighted space l^2(m); the associated operator is
``H = M^{-1} (K + diag(p))``.  Off-diagonal entries of ``K`` are
nonpositive and its row sums vanish except where a Dirichlet boundary
removed a neighbour, so the discrete form is itself a Dirichlet form.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.integrate as si
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from formlab.errors import DegenerateInputError, DomainError, PositivityError, SizeError
from formlab.linalg import lanczos_extreme_estimates

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    n: int
    bc: tuple = (DIRICHLET, DIRICHLET)

    def __post_init__(self):
        if not self.a < self.b:
            raise DomainError(f"need a < b, got a={self.a}, b={self.b}")
        if int(self.n) < 3:
            raise SizeError(f"grid needs at least 3 points, got n={self.n}")
        bc = tuple(s.lower() for s in self.bc)
        if len(bc) != 2 or any(s not in (DIRICHLET, NEUMANN) for s in bc):
            raise DomainError(f"boundary conditions must be dirichlet/neumann, got {self.bc}")
        object.__setattr__(self, "bc", bc)
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self):
        return (self.b - self.a) / (self.n - 1)

    @property
    def x(self):
        """All grid points, boundary included."""
        return self.a + self.h * np.arange(self.n)

    @property
    def active(self):
        """Indices of grid points carrying unknowns (Dirichlet ends removed)."""
        lo = 1 if self.bc[0] == DIRICHLET else 0
        hi = self.n - 1 if self.bc[1] == DIRICHLET else self.n
        return np.arange(lo, hi)

    @property
    def x_active(self):
        return self.x[self.active]

    def pad(self, u):
        """Extend a vector on active points by zeros at Dirichlet ends."""
        full = np.zeros(self.n, dtype=np.result_type(u, float))
        full[self.active] = u
        return full


@dataclass(frozen=True, eq=False)
class DiscreteForm:
    K: sp.csr_matrix
    p: np.ndarray
    m: np.ndarray
    carrier: object = None
    x: np.ndarray = None  # node coordinates when meaningful
    _edges: tuple = field(default=None, repr=False)

    def __post_init__(self):
        K = sp.csr_matrix(self.K, dtype=float)
        p = np.asarray(self.p, dtype=float)
        m = np.asarray(self.m, dtype=float)
        n = K.shape[0]
        if K.shape != (n, n) or p.shape != (n,) or m.shape != (n,):
            raise SizeError("K, p, m have inconsistent sizes")
        if np.any(m <= 0):
            raise PositivityError("mass weights must be positive")
        scale = max(abs(K).max() if K.nnz else 0.0, 1.0)
        asym = abs(K - K.T)
        if asym.nnz and asym.max() > 1e-12 * scale:
            raise DomainError("kinetic matrix is not symmetric")
        off = K - sp.diags(K.diagonal())
        if off.nnz and off.max() > 1e-14 * scale:
            raise DomainError("kinetic off-diagonal entries must be nonpositive")
        rows = np.asarray(K.sum(axis=1)).ravel()
        if np.any(rows < -1e-10 * scale):
            raise DomainError("kinetic row sums must be nonnegative")
        for arr in (p, m):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "m", m)
        coo = sp.triu(K, k=1).tocoo()
        w = -coo.data
        keep = w != 0
        killing = np.clip(rows, 0.0, None)
        killing[np.abs(rows) < 1e-12 * scale] = 0.0
        object.__setattr__(self, "_edges", (coo.row[keep], coo.col[keep], w[keep], killing))

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def A(self):
        """Matrix of the full form E + nu."""
        return (self.K + sp.diags(self.p)).tocsr()

    def edges(self):
        """(i, j, w_ij, killing): edge list with w_ij = -K_ij > 0 and row-sum defects."""
        return self._edges

    def value(self, u, v=None):
        v = u if v is None else v
        return np.asarray(u) @ (self.A @ np.conj(v))

    def kinetic(self, u, v=None):
        v = u if v is None else v
        return np.asarray(u) @ (self.K @ np.conj(v))

    def inner(self, u, v=None):
        v = u if v is None else v
        return np.sum(self.m * np.asarray(u) * np.conj(v))

    def norm(self, u):
        return math.sqrt(float(np.real(self.inner(u))))

    def symmetric_matrix(self):
        """M^{-1/2} (K + diag p) M^{-1/2}, unitarily equivalent to H."""
        s = sp.diags(1.0 / np.sqrt(self.m))
        return (s @ self.A @ s).tocsr()

    def with_potential(self, p):
        return DiscreteForm(self.K, p, self.m, carrier=self.carrier, x=self.x)


def _nearest_index(grid, x):
    t = (x - grid.a) / grid.h
    i = math.floor(t)
    if t - i > 0.5:
        i += 1
    return i


def potential_diagonal(grid, measure):
    """Mass-lumped diagonal of the measure form on the active grid points."""
    x = grid.x_active
    h = grid.h
    m = np.full(x.shape, h)
    if grid.bc[0] == NEUMANN:
        m[0] = h / 2
    if grid.bc[1] == NEUMANN:
        m[-1] = h / 2
    V = measure.V(x)
    if not np.all(np.isfinite(V)):
        raise DomainError("measure density is not finite at every grid point")
    p = V * m
    active = grid.active
    for xa, _ in measure.atoms:
        if not grid.a < xa < grid.b:
            raise DomainError(f"atom at {xa} lies outside ({grid.a}, {grid.b})")
    for xa, w in measure.atoms_in(grid.a, grid.b, closed=False):
        i = _nearest_index(grid, xa)
        i = min(max(i, active[0]), active[-1])
        p[i - active[0]] += w
    return p, m


def assemble_schrodinger_form(grid, measure):
    """Three-point finite-difference form of -d^2/dx^2 + nu on ``grid``."""
    n = grid.n
    h = grid.h
    main = np.full(n, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    Kfull = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    idx = grid.active
    K = Kfull[idx][:, idx]
    p, m = potential_diagonal(grid, measure)
    return DiscreteForm(K, p, m, carrier=grid, x=grid.x_active)


def form_from_matrices(K, p, m, x=None):
    return DiscreteForm(sp.csr_matrix(K), np.asarray(p, float), np.asarray(m, float), x=x)


# ---------------------------------------------------------------- energy measure


@dataclass(frozen=True, eq=False)
class EnergyDensity:
    """Node-wise density of the energy measure with respect to ``mass``.

    ``boundary`` holds the part of the measure sitting on removed
    Dirichlet points (where every test function vanishes).
    """
    values: np.ndarray
    mass: np.ndarray
    boundary: complex = 0.0

    @property
    def charges(self):
        return self.values * self.mass

    def integrate(self, phi):
        return np.sum(np.asarray(phi) * self.charges)

    def total(self):
        return np.sum(self.charges) + self.boundary


def energy_measure(form, u, v=None):
    u = np.asarray(u)
    v = u if v is None else np.asarray(v)
    if u.shape != (form.n,) or v.shape != (form.n,):
        raise SizeError(f"vectors must have length {form.n}")
    i, j, w, s = form.edges()
    c = w * (u[i] - u[j]) * np.conj(v[i] - v[j])
    charge = np.zeros(form.n, dtype=c.dtype if c.size else float)
    np.add.at(charge, i, 0.5 * c)
    np.add.at(charge, j, 0.5 * c)
    kill = 0.5 * s * u * np.conj(v)
    charge = charge + kill
    return EnergyDensity(charge / form.m, form.m, np.sum(kill))


def interval_energy(grid, u, lo, hi):
    """Energy measure of the piecewise-linear interpolant of ``u`` on [lo, hi]."""
    full = grid.pad(u)
    x = grid.x
    h = grid.h
    a = np.clip(x[:-1], lo, hi)
    b = np.clip(x[1:], lo, hi)
    slope = np.diff(full) / h
    return float(np.sum(np.abs(slope) ** 2 * (b - a)))


def interval_mass(grid, u, lo, hi):
    """Exact L^2 mass of the piecewise-linear interpolant of ``u`` on [lo, hi]."""
    full = grid.pad(u)
    x = grid.x
    a = np.clip(x[:-1], lo, hi)
    b = np.clip(x[1:], lo, hi)
    ua = np.interp(a, x, np.real(full)) + 1j * np.interp(a, x, np.imag(full))
    ub = np.interp(b, x, np.real(full)) + 1j * np.interp(b, x, np.imag(full))
    seg = (b - a) * (np.abs(ua) ** 2 + np.real(ua * np.conj(ub)) + np.abs(ub) ** 2) / 3.0
    return float(np.sum(seg))


# ---------------------------------------------------------- ground-state transform


def _check_positive(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise PositivityError("ground state must be strictly positive")
    return phi


def gst_quadratic(form, ground, u, v=None):
    """sum_edges w_ij G_i G_j (u_i/G_i - u_j/G_j) conj(v_i/G_i - v_j/G_j)."""
    G = _check_positive(ground)
    v = u if v is None else v
    f = np.asarray(u) / G
    g = np.asarray(v) / G
    i, j, w, _ = form.edges()
    return np.sum(w * G[i] * G[j] * (f[i] - f[j]) * np.conj(g[i] - g[j]))


def gst_scale(form, ground, lam, phi, psi):
    """Magnitude of the terms entering the transform identity (for relative checks)."""
    G = _check_positive(ground)
    absA = abs(form.A)
    f = np.abs(phi) / G
    g = np.abs(psi) / G
    i, j, w, _ = form.edges()
    t1 = np.abs(phi) @ (absA @ np.abs(psi))
    t2 = np.sum(w * G[i] * G[j] * (f[i] + f[j]) * (g[i] + g[j]))
    t3 = abs(lam) * np.sum(form.m * np.abs(phi) * np.abs(psi))
    return float(t1 + t2 + t3)


def gst_residual(form, ground, lam, phi, psi, relative=False):
    """Defect of the ground-state transform identity for the pair (phi, psi).

    Vanishes to rounding when ``ground`` is a positive solution of
    (H - lam) ground = 0 on the discrete model.
    """
    lhs = form.value(phi, psi)
    rhs = gst_quadratic(form, ground, phi, psi) + lam * form.inner(phi, psi)
    r = float(abs(lhs - rhs))
    if relative:
        return r / max(gst_scale(form, ground, lam, phi, psi), np.finfo(float).tiny)
    return r


# ----------------------------------------------------------------------- capacity


def capacity_1d(form, U):
    """Capacity of the interval ``U`` for the form with its L^2 mass term.

    Minimizes h[v] + ||v||^2 over grid vectors with v = 1 on U, where h is
    the full form (kinetic plus potential); the outside part of the
    minimizer solves the discrete equation for that quadratic form.
    """
    lo, hi = U
    if not lo < hi:
        return 0.0
    grid = form.carrier
    if not isinstance(grid, Grid1D):
        raise DomainError("capacity_1d needs a form assembled on a Grid1D")
    if not (grid.a < lo and hi < grid.b):
        raise DomainError(f"U=({lo}, {hi}) is not inside ({grid.a}, {grid.b})")
    x = form.x
    tol = 1e-9 * grid.h
    inside = (x >= lo - tol) & (x <= hi + tol)
    if not inside.any():
        inside[np.argmin(np.abs(x - 0.5 * (lo + hi)))] = True
    Q = (form.A + sp.diags(form.m)).tocsr()
    free = ~inside
    v = np.ones(form.n)
    if free.any():
        Qff = Q[free][:, free].tocsc()
        rhs = -Q[free][:, inside] @ np.ones(inside.sum())
        v[free] = spla.spsolve(Qff, rhs)
    return float(v @ (Q @ v))


# --------------------------------------------------------------- intrinsic metric


def intrinsic_distance(weight, x, y, samples=257):
    """Intrinsic distance of the form int a(t) |u'|^2 dt between x and y."""
    if x == y:
        return 0.0
    lo, hi = min(x, y), max(x, y)
    if callable(weight):
        a = weight
    else:
        c = float(weight)
        a = lambda t: c + 0.0 * np.asarray(t)  # noqa: E731
    vals = np.asarray(a(np.linspace(lo, hi, samples)), dtype=float)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise DomainError("coefficient must be positive and finite on [x, y]")
    val, _ = si.quad(lambda t: float(a(t)) ** -0.5, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-12)
    return float(val)


@dataclass(frozen=True)
class VolumeGrowthReport:
    radii: np.ndarray
    alphas: np.ndarray
    table: np.ndarray  # shape (len(alphas), len(radii)): exp(-alpha R) m(B(x, R))
    per_alpha: tuple
    satisfied: bool


def volume_growth_check(metric, measure, x, radii, alphas, drop=0.5):
    """Finite-radius diagnostic for subexponential volume growth.

    ``measure`` is either a callable ``(x, R) -> m(B(x, R))`` or a pair
    ``(points, weights)`` of a discrete sample, in which case ``metric``
    defines the balls.  For each alpha the weighted volumes must be
    nonincreasing over the last third of the radii and end below
    ``drop`` times their maximum.
    """
    radii = np.asarray(radii, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    if callable(measure):
        vol = np.array([measure(x, R) for R in radii], dtype=float)
    else:
        pts, wts = measure
        d = np.array([metric(x, q) for q in pts])
        vol = np.array([np.sum(np.asarray(wts)[d <= R]) for R in radii])
    table = np.exp(-np.outer(alphas, radii)) * vol[None, :]
    tail = max(2, len(radii) // 3)
    flags = []
    for row in table:
        t = row[-tail:]
        flags.append(bool(np.all(np.diff(t) <= 1e-12 * max(t.max(), 1e-300))
                          and row[-1] <= drop * row.max()))
    return VolumeGrowthReport(radii, alphas, table, tuple(flags), all(flags))


# ------------------------------------------------------------------ irreducibility


@dataclass(frozen=True, eq=False)
class IrreducibilityCertificate:
    n_components: int
    labels: np.ndarray
    block: np.ndarray = None  # index set of the first reducing block
    shift: float = None
    resolvent_min: float = None
    semigroup_min: float = None
    semigroup_log_min: float = None


def nonnegative_expm(B, t=1.0):
    """exp(t B) for an entrywise nonnegative matrix, without cancellation.

    Taylor series on a scaled copy followed by repeated squaring; every
    intermediate is nonnegative, so small entries keep relative accuracy.
    Returns (X, log_scale) with exp(tB) = exp(log_scale) * X.
    """
    B = np.asarray(B, dtype=float) * t
    if np.any(B < 0):
        raise DomainError("matrix must be entrywise nonnegative")
    nrm = np.abs(B).sum(axis=1).max()
    s = max(0, int(math.ceil(math.log2(nrm / 0.5)))) if nrm > 0.5 else 0
    C = B / 2.0 ** s
    X = np.eye(B.shape[0])
    term = np.eye(B.shape[0])
    for k in range(1, 30):
        term = term @ C / k
        X = X + term
        if term.max() < 1e-18 * X.max():
            break
    log_scale = 0.0
    for _ in range(s):
        X = X @ X
        log_scale *= 2.0
        mx = X.max()
        X /= mx
        log_scale += math.log(mx)
    return X, log_scale


def is_irreducible(form, certify=True, max_dense=800, t=1.0):
    """Connectivity of the form's off-diagonal graph, with positivity certificates.

    For connected forms of moderate size the certificate records the
    smallest entry of the resolvent (H - E)^{-1}, E = inf sigma(H) - 1,
    and of the semigroup exp(-tH) (symmetrized, hence same sign pattern).
    """
    off = form.K - sp.diags(form.K.diagonal())
    ncomp, labels = csgraph.connected_components(off != 0, directed=False)
    if ncomp > 1:
        block = np.flatnonzero(labels == labels[0])
        return False, IrreducibilityCertificate(ncomp, labels, block=block)
    if not certify or form.n > max_dense:
        return True, IrreducibilityCertificate(ncomp, labels)
    S = form.symmetric_matrix().toarray()
    lam0 = float(sla.eigvalsh(S, subset_by_index=(0, 0))[0])
    E = lam0 - 1.0
    R = np.linalg.inv(S - E * np.eye(form.n))
    c = float(np.max(np.diag(S)))
    B = c * np.eye(form.n) - S
    B[B < 0] = 0.0  # rounding only: off-diagonals of S are nonpositive
    X, lg = nonnegative_expm(B, t)
    xmin = float(X.min())
    log_min = lg - c * t + (math.log(xmin) if xmin > 0 else -math.inf)
    return True, IrreducibilityCertificate(
        ncomp, labels, shift=E, resolvent_min=float(R.min()),
        semigroup_min=math.exp(log_min) if log_min > -745 else 0.0,
        semigroup_log_min=log_min,
    )


# -------------------------------------------------------------------- Weyl residual


def _symmetric_lu(A):
    """LU with symmetric permutation only; pivot signs then give the inertia."""
    return spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options=dict(SymmetricMode=True))


@dataclass(frozen=True)
class WeylResidualReport:
    lam: float
    residual: float
    shift: float
    lambda_min_estimate: float


def weyl_residual(form, lam, u, method="solve", lanczos_steps=20):
    """sup over ||v||_h <= 1 of |(h - lam)[u, v]| for u normalized in l^2(m).

    Evaluated as ||(H + c)^{-1/2} (H - lam) u||; with ``method="solve"``
    the square root is avoided through r^T (S + c)^{-1} r, with
    ``method="dense"`` it is applied by eigendecomposition.
    """
    u = np.asarray(u, dtype=float)
    nu = form.norm(u)
    if nu == 0:
        raise DegenerateInputError("u must be nonzero")
    S = form.symmetric_matrix()
    w = np.sqrt(form.m) * u / nu
    r = S @ w - lam * w
    est, _ = lanczos_extreme_estimates(S, steps=lanczos_steps)
    c = 1.0 + abs(est)
    if method == "dense":
        ev, Q = sla.eigh(S.toarray())
        while ev[0] + c <= 0:
            c *= 2.0
        y = Q @ ((Q.T @ r) / np.sqrt(ev + c))
        res = float(np.linalg.norm(y))
    else:
        n = form.n
        while True:
            lu = _symmetric_lu(S + c * sp.identity(n))
            if np.all(lu.U.diagonal() > 0):
                break
            c *= 2.0
        q = float(r @ lu.solve(r))
        res = math.sqrt(max(q, 0.0))
    return WeylResidualReport(float(lam), res, c, est)
