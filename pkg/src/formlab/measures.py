"""Signed measures on the line, free resolvent kernels, Kato constants and form bounds."""
from dataclasses import dataclass, field, replace
import math

import numpy as np
import scipy.integrate as si
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from formlab.errors import DegenerateInputError, DomainError


def _zero_density(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class SignedMeasure1D:
    """A density ``V`` (w.r.t. Lebesgue measure) plus point masses.

    ``atoms`` is a finite tuple of ``(position, weight)`` pairs; negative
    weights are attractive.  ``lattice`` optionally adds an infinite
    periodic family ``(weight, period, offset)``, materialized per window
    through :meth:`atoms_in`.  ``support`` is the closed hull of the
    density's support (``None`` when unbounded) and ``breakpoints`` lists
    discontinuities of ``V``; for ``piecewise_constant`` densities they
    delimit the constant pieces.
    """
    density: object = None
    atoms: tuple = ()
    lattice: tuple = None
    support: tuple = None
    breakpoints: tuple = ()
    piecewise_constant: bool = False
    label: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        atoms = tuple(sorted((float(x), float(w)) for x, w in self.atoms))
        pos = [x for x, _ in atoms]
        if len(set(pos)) != len(pos):
            raise DomainError("atom positions must be distinct")
        if not all(math.isfinite(x) and math.isfinite(w) for x, w in atoms):
            raise DomainError("atoms must be finite")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "breakpoints", tuple(sorted(float(b) for b in self.breakpoints)))
        if self.lattice is not None:
            w, period, offset = (float(v) for v in self.lattice)
            if period <= 0:
                raise DomainError("lattice period must be positive")
            object.__setattr__(self, "lattice", (w, period, offset))

    # -- evaluation
    def V(self, x):
        f = self.density or _zero_density
        return np.asarray(f(np.asarray(x, dtype=float)), dtype=float) + np.zeros(np.shape(x))

    @property
    def has_density(self):
        return self.density is not None

    def atoms_in(self, lo, hi, closed=True):
        """All point masses in [lo, hi] (open interval if ``closed`` is false)."""
        if closed:
            out = [(x, w) for x, w in self.atoms if lo <= x <= hi]
        else:
            out = [(x, w) for x, w in self.atoms if lo < x < hi]
        if self.lattice is not None:
            w, period, offset = self.lattice
            k0 = math.ceil((lo - offset) / period - 1e-12)
            k1 = math.floor((hi - offset) / period + 1e-12)
            for k in range(k0, k1 + 1):
                x = offset + k * period
                x = round(x, 12)
                if closed or lo < x < hi:
                    out.append((x, w))
        out.sort()
        merged = []
        for x, w in out:
            if merged and abs(merged[-1][0] - x) < 1e-12:
                merged[-1] = (merged[-1][0], merged[-1][1] + w)
            else:
                merged.append((x, w))
        return merged

    def breakpoints_in(self, lo, hi):
        return [b for b in self.breakpoints if lo < b < hi]

    # -- algebra
    def scaled(self, c):
        c = float(c)
        f = self.density
        dens = None if f is None else (lambda x, f=f: c * f(x))
        lat = None if self.lattice is None else (c * self.lattice[0],) + self.lattice[1:]
        return replace(self, density=dens, atoms=tuple((x, c * w) for x, w in self.atoms),
                       lattice=lat, label=f"{c:g}*{self.label}")

    def total_variation(self):
        f = self.density
        dens = None if f is None else (lambda x, f=f: np.abs(f(x)))
        lat = None if self.lattice is None else (abs(self.lattice[0]),) + self.lattice[1:]
        return replace(self, density=dens, atoms=tuple((x, abs(w)) for x, w in self.atoms),
                       lattice=lat, label=f"|{self.label}|")

    def negative_part(self):
        f = self.density
        dens = None if f is None else (lambda x, f=f: np.maximum(-f(x), 0.0))
        lat = None
        if self.lattice is not None and self.lattice[0] < 0:
            lat = (-self.lattice[0],) + self.lattice[1:]
        return replace(self, density=dens, atoms=tuple((x, -w) for x, w in self.atoms if w < 0),
                       lattice=lat, label=f"({self.label})_-")

    def __add__(self, other):
        if self.lattice is not None and other.lattice is not None:
            raise DomainError("cannot add two lattice measures")
        f, g = self.density, other.density
        if f is None:
            dens = g
        elif g is None:
            dens = f
        else:
            dens = lambda x: f(x) + g(x)  # noqa: E731
        atoms = dict(self.atoms)
        for x, w in other.atoms:
            atoms[x] = atoms.get(x, 0.0) + w
        if not self.has_density:
            supp = other.support
        elif not other.has_density:
            supp = self.support
        elif self.support is None or other.support is None:
            supp = None
        else:
            supp = (min(self.support[0], other.support[0]), max(self.support[1], other.support[1]))
        return SignedMeasure1D(
            density=dens, atoms=tuple(atoms.items()), lattice=self.lattice or other.lattice,
            support=supp, breakpoints=self.breakpoints + other.breakpoints,
            piecewise_constant=self.piecewise_constant and other.piecewise_constant,
            label=f"{self.label}+{other.label}",
        )

    def atom_hull(self):
        if not self.atoms:
            return None
        return self.atoms[0][0], self.atoms[-1][0]

    def is_compact(self):
        if self.lattice is not None:
            return False
        return self.density is None or self.support is not None


# ------------------------------------------------------------------ constructors


def zero():
    return SignedMeasure1D(piecewise_constant=True, label="zero")


def point_masses(atoms):
    return SignedMeasure1D(atoms=tuple(atoms), piecewise_constant=True,
                           label="atoms" if atoms else "zero")


def delta(x0=0.0, weight=1.0):
    return point_masses([(x0, weight)])


def constant(c):
    c = float(c)
    return SignedMeasure1D(density=lambda x: np.full(np.shape(x), c), piecewise_constant=True,
                           label=f"const({c:g})", params={"c": c})


def harmonic(omega=1.0):
    """V(x) = omega^2 x^2; spectrum {omega (2n+1)} on the line."""
    w2 = float(omega) ** 2
    return SignedMeasure1D(density=lambda x: w2 * np.asarray(x) ** 2, label=f"harmonic({omega:g})",
                           params={"omega": float(omega)})


def box(lo, hi, height=1.0):
    """height times the indicator of [lo, hi]."""
    lo, hi, height = float(lo), float(hi), float(height)
    if not lo < hi:
        raise DomainError("box needs lo < hi")

    def dens(x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= lo) & (x <= hi), height, 0.0)

    return SignedMeasure1D(density=dens, support=(lo, hi), breakpoints=(lo, hi),
                           piecewise_constant=True, label=f"box({lo:g},{hi:g},{height:g})",
                           params={"lo": lo, "hi": hi, "height": height})


def well(depth, width, center=0.0):
    """Square well: V = -depth on |x - center| <= width/2."""
    m = box(center - width / 2, center + width / 2, -float(depth))
    return replace(m, label=f"well({depth:g},{width:g})")


def periodic_atoms(weight, period=1.0, offset=0.0):
    """Kronig-Penney comb: weight * sum_k delta(x - offset - k period)."""
    return SignedMeasure1D(lattice=(weight, period, offset), piecewise_constant=True,
                           label=f"comb({weight:g},{period:g})")


def table(xs, vs, outside=0.0):
    """Piecewise-linear density through the points (xs, vs), ``outside`` beyond them."""
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if xs.ndim != 1 or xs.shape != vs.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise DomainError("table needs increasing abscissae with matching values")
    if not np.all(np.isfinite(vs)):
        raise DomainError("table values must be finite")

    def dens(x):
        return np.interp(x, xs, vs, left=outside, right=outside)

    supp = (float(xs[0]), float(xs[-1])) if outside == 0 else None
    return SignedMeasure1D(density=dens, support=supp, breakpoints=(xs[0], xs[-1]),
                           label="table")


def table_file(path):
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] < 2:
        raise DomainError(f"{path}: expected two columns x,V")
    return table(data[:, 0], data[:, 1])


# ---------------------------------------------------------------- resolvent kernel


def resolvent_kernel_free_line(alpha, x, y):
    """Green kernel exp(-sqrt(alpha)|x-y|) / (2 sqrt(alpha)) of -d^2/dx^2 + alpha."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    s = math.sqrt(alpha)
    return np.exp(-s * np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))) / (2 * s)


# ----------------------------------------------------------------- Kato constants


def _simpson_nodes(lo, hi, s):
    """Odd node count adequate for integrating exp(-s|x-y|) times a smooth density."""
    n = int(min(4000, max(32, math.ceil((hi - lo) * max(s, 1.0) * 60))))
    n += n % 2
    return np.linspace(lo, hi, n + 1)


def _potential_at(measure, alpha, x):
    """int G_alpha(x, y) d|mu|(y) at a single point x."""
    s = math.sqrt(alpha)
    total = 0.0
    for xa, w in measure.atoms:
        total += abs(w) * math.exp(-s * abs(x - xa))
    total /= 2 * s
    if measure.has_density:
        lo, hi = measure.support
        cuts = sorted({lo, hi, *measure.breakpoints_in(lo, hi), *([x] if lo < x < hi else [])})
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b <= a:
                continue
            y = _simpson_nodes(a, b, s)
            # nudge evaluation points off jump locations so one-sided values are used
            ym = np.clip(y, a + 1e-13 * (b - a), b - 1e-13 * (b - a))
            f = np.abs(measure.V(ym)) * np.exp(-s * np.abs(x - y)) / (2 * s)
            total += float(si.simpson(f, x=y))
    return total


def kato_constant(measure, alpha, candidates=801):
    """sup_x of int G_alpha(x, y) d|mu|(y) for a compactly supported measure."""
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    if not measure.is_compact():
        raise DomainError("kato_constant needs a compactly supported measure (pass a window-limited one)")
    mu = measure.total_variation()
    pts = [x for x, _ in mu.atoms]
    lo = hi = None
    if mu.has_density:
        lo, hi = mu.support
    if pts:
        lo = min(pts) if lo is None else min(lo, min(pts))
        hi = max(pts) if hi is None else max(hi, max(pts))
    if lo is None:
        return 0.0
    # outside the hull of the support the potential is monotone, so the sup lies inside
    grid = np.unique(np.concatenate([np.linspace(lo, hi, candidates), pts]))
    vals = np.array([_potential_at(mu, alpha, x) for x in grid])
    k = int(np.argmax(vals))
    best = float(vals[k])
    if len(grid) > 2:
        a = grid[max(k - 1, 0)]
        b = grid[min(k + 1, len(grid) - 1)]
        if b > a:
            res = so.minimize_scalar(lambda t: -_potential_at(mu, alpha, t), bounds=(a, b),
                                     method="bounded", options={"xatol": 1e-12 * max(1.0, hi - lo)})
            best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True)
class KatoReport:
    alphas: tuple
    values: tuple
    c_kato: float
    decay_exponent: float
    evidence: str  # "kato" | "extended-kato"
    form_bound: tuple  # (kappa, c_kappa), or None if no alpha gives c_alpha < 1
    monotone: bool


def kato_class_check(measure, alpha_grid, threshold=1e-3, decay_exponent=-0.4):
    """Kato constants over an increasing alpha grid with a decay verdict.

    ``measure`` may be a callable ``alpha -> SignedMeasure1D`` for
    alpha-dependent families.  Evidence is "kato" when the last constant is
    below ``threshold`` or the fitted log-log slope is steeper than
    ``decay_exponent``.
    """
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise DegenerateInputError("alpha grid is empty")
    if any(a <= 0 for a in alphas) or any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise DomainError("alpha grid must be positive and increasing")
    vals = []
    for a in alphas:
        mu = measure(a) if callable(measure) else measure
        vals.append(kato_constant(mu, a))
    c_kato = min(vals)
    slope = 0.0
    if len(alphas) >= 2 and all(v > 0 for v in vals):
        slope = float(np.polyfit(np.log(alphas), np.log(vals), 1)[0])
    elif len(alphas) >= 2 and vals[-1] == 0:
        slope = -math.inf
    kato = vals[-1] <= threshold or slope <= decay_exponent
    admissible = [(v, a * v) for a, v in zip(alphas, vals) if v < 1]
    bound = admissible[-1] if admissible else None
    monotone = all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(vals, vals[1:]))
    return KatoReport(tuple(alphas), tuple(vals), c_kato, slope,
                      "kato" if kato else "extended-kato", bound, monotone)


# ---------------------------------------------------------------------- form bound


@dataclass(frozen=True)
class FormBound:
    kappa: float
    c_kappa: float
    admissible: bool
    c_grid: tuple
    kappas: tuple


def _abs_potential(measure, form):
    from formlab.forms import Grid1D, potential_diagonal

    grid = form.carrier
    if isinstance(grid, Grid1D):
        p, _ = potential_diagonal(grid, measure.total_variation())
        return np.abs(p)
    return np.abs(np.asarray(form.p))


def relative_bound(form, weights, c):
    """Largest eigenvalue of diag(weights) relative to K + c M."""
    S = np.flatnonzero(weights > 0)
    if S.size == 0:
        return 0.0
    A = (form.K + c * sp.diags(form.m)).tocsc()
    lu = spla.splu(A)
    d = np.sqrt(weights[S])
    n = form.n
    if S.size <= 1500:
        E = np.zeros((n, S.size))
        E[S, np.arange(S.size)] = 1.0
        X = lu.solve(E)[S]
        B = d[:, None] * X * d[None, :]
        B = 0.5 * (B + B.T)
        return float(np.linalg.eigvalsh(B)[-1])

    def mv(v):
        full = np.zeros(n)
        full[S] = d * v
        return d * lu.solve(full)[S]

    op = spla.LinearOperator((S.size, S.size), matvec=mv, dtype=float)
    return float(spla.eigsh(op, k=1, which="LA", return_eigenvectors=False)[0])


def form_bound(measure, form, c_grid):
    """Relative form bound of |nu| with respect to the kinetic form.

    For each c the bound kappa(c) is the best constant in
    |nu|[u] <= kappa (E[u] + c ||u||^2); the pair with the smallest
    kappa below one is returned.
    """
    weights = _abs_potential(measure, form)
    cs = tuple(float(c) for c in c_grid)
    if not cs:
        raise DegenerateInputError("c grid is empty")
    if not np.any(weights > 0):
        return FormBound(0.0, 0.0, True, cs, tuple(0.0 for _ in cs))
    if any(c <= 0 for c in cs):
        raise DomainError("c values must be positive")
    ks = tuple(relative_bound(form, weights, c) for c in cs)
    ok = [(k, c) for k, c in zip(ks, cs) if k < 1]
    if not ok:
        i = int(np.argmin(ks))
        return FormBound(ks[i], cs[i], False, cs, ks)
    k, c = min(ok)
    return FormBound(k, c, True, cs, ks)
