"""Compact metric graphs with Kirchhoff vertex conditions."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from formlab import config
from formlab.errors import DomainError, NotARootError, SizeError
from formlab.forms import DiscreteForm


@dataclass(frozen=True)
class Edge:
    id: object
    head: object  # initial vertex, t = 0
    tail: object  # terminal vertex, t = length; None for a half-line
    length: float


@dataclass(frozen=True, eq=False)
class MetricGraph:
    """Vertices, edges and edge lengths; loops and parallel edges are allowed."""
    vertices: tuple
    edges: tuple
    min_length: float = None

    @classmethod
    def from_triplets(cls, vertices, triplets, min_length=None):
        """Build from (head, tail, length) triplets; edge ids are their positions."""
        edges = tuple(Edge(i, h, t, float(length)) for i, (h, t, length) in enumerate(triplets))
        return cls(tuple(vertices), edges, min_length)

    def __post_init__(self):
        edges = tuple(e if isinstance(e, Edge) else Edge(*e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "vertices", tuple(self.vertices))

    @property
    def vertex_index(self):
        return {v: i for i, v in enumerate(self.vertices)}

    @property
    def edge_index(self):
        return {e.id: i for i, e in enumerate(self.edges)}

    @property
    def lower_length(self):
        if self.min_length is not None:
            return float(self.min_length)
        return min(e.length for e in self.edges) if self.edges else math.inf

    def is_compact(self):
        return all(math.isfinite(e.length) and e.tail is not None for e in self.edges)

    def total_length(self):
        return float(sum(e.length for e in self.edges))

    def ends_at(self):
        """For each vertex, the list of incident edge ends (edge position, 0 | 1)."""
        idx = self.vertex_index
        inc = [[] for _ in self.vertices]
        for k, e in enumerate(self.edges):
            inc[idx[e.head]].append((k, 0))
            if e.tail is not None:
                inc[idx[e.tail]].append((k, 1))
        return inc


@dataclass(frozen=True)
class GraphDiagnostics:
    valid: bool
    connected: bool
    n_components: int
    total_length: float
    degrees: dict
    loops: int
    parallel_edges: int
    infinite_edges: int


def _components(g):
    idx = g.vertex_index
    n = len(g.vertices)
    rows, cols = [], []
    for e in g.edges:
        if e.tail is not None:
            rows.append(idx[e.head])
            cols.append(idx[e.tail])
    A = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return csgraph.connected_components(A, directed=False)


def validate_graph(g):
    if len(set(g.vertices)) != len(g.vertices):
        raise DomainError("vertex ids must be unique")
    if len({e.id for e in g.edges}) != len(g.edges):
        raise DomainError("edge ids must be unique")
    vs = set(g.vertices)
    lmin = g.min_length
    if lmin is not None and not lmin > 0:
        raise DomainError("minimum edge length must be positive")
    for e in g.edges:
        if e.head not in vs or (e.tail is not None and e.tail not in vs):
            raise DomainError(f"edge {e.id!r} references an unknown vertex")
        if not e.length > 0 or (lmin is not None and e.length < lmin):
            raise DomainError(f"edge {e.id!r} has length {e.length} below the minimum")
        if e.tail is None and math.isfinite(e.length):
            raise DomainError(f"edge {e.id!r}: only infinite edges may omit the tail vertex")
    deg = {v: 0 for v in g.vertices}
    for e in g.edges:
        deg[e.head] += 1
        if e.tail is not None:
            deg[e.tail] += 1
    pairs = [tuple(sorted((repr(e.head), repr(e.tail)))) for e in g.edges if e.tail is not None]
    ncomp, _ = _components(g)
    return GraphDiagnostics(
        valid=True, connected=ncomp == 1, n_components=int(ncomp),
        total_length=g.total_length(), degrees=deg,
        loops=sum(e.head == e.tail for e in g.edges),
        parallel_edges=len(pairs) - len(set(pairs)),
        infinite_edges=sum(not math.isfinite(e.length) for e in g.edges),
    )


# ------------------------------------------------------------- secular matrix


def secular_matrix(g, k):
    """Vertex-condition matrix acting on (A_e, B_e) for u_e = A cos kt + B sin kt.

    Rows per vertex: continuity between the first incident end and each
    other end, then the sum of inward derivatives divided by k.
    """
    ne = len(g.edges)
    L = np.array([e.length for e in g.edges])
    c, s = np.cos(k * L), np.sin(k * L)
    M = np.zeros((2 * ne, 2 * ne))
    row = 0
    for ends in g.ends_at():
        if not ends:
            continue

        def val(end):
            e, side = end
            out = np.zeros(2 * ne)
            if side == 0:
                out[2 * e] = 1.0
            else:
                out[2 * e], out[2 * e + 1] = c[e], s[e]
            return out

        first = val(ends[0])
        for other in ends[1:]:
            M[row] = first - val(other)
            row += 1
        for e, side in ends:
            if side == 0:
                M[row, 2 * e + 1] += 1.0
            else:
                M[row, 2 * e] += s[e]
                M[row, 2 * e + 1] -= c[e]
        row += 1
    return M


def _sigma_min(g, ks):
    mats = np.stack([secular_matrix(g, k) for k in ks])
    return np.linalg.svd(mats, compute_uv=False)[:, -1]


def _require_compact(g):
    if not g.is_compact():
        raise DomainError("secular scan needs a compact graph (truncate infinite edges first)")


def golden_min(f, a, b, tol):
    """Golden-section minimizer; unlike fminbound it has no relative floor on the bracket."""
    r = (math.sqrt(5) - 1) / 2
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - r * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + r * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def kirchhoff_roots(g, k_max, steps=None, threads=1, root_tol=None, mult_tol=None):
    """Positive wavenumbers k <= k_max with Kirchhoff eigenfunctions, and multiplicities.

    Candidates are local minima of the smallest singular value on a uniform
    scan; each is refined by golden-section search, polished on the
    determinant when it changes sign, and kept when the secular matrix is
    numerically singular.
    """
    _require_compact(g)
    steps = steps or config.TOL.secular_steps
    root_tol = root_tol or config.TOL.secular_root_tol
    mult_tol = mult_tol or config.TOL.multiplicity_tol
    ks = k_max * np.arange(1, steps + 1) / steps
    chunks = np.array_split(ks, max(1, min(threads, 64) * 4)) if threads > 1 else [ks]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sig = np.concatenate(list(pool.map(lambda c: _sigma_min(g, c), chunks)))
    else:
        sig = _sigma_min(g, ks)
    dk = k_max / steps
    ext = np.concatenate([[np.inf], sig, [np.inf]])
    cand = np.flatnonzero((ext[1:-1] <= ext[:-2]) & (ext[1:-1] <= ext[2:]))
    roots = []
    for j in cand:
        a, b = max(ks[j] - dk, 0.5 * dk), min(ks[j] + dk, k_max)
        k0 = golden_min(lambda t: _sigma_min(g, [t])[0], a, b, root_tol)
        det = lambda t: np.linalg.det(secular_matrix(g, t))  # noqa: E731
        lo, hi = max(k0 - 2 * dk, 0.5 * dk), min(k0 + 2 * dk, k_max)
        sv = np.linalg.svd(secular_matrix(g, k0), compute_uv=False)
        scale = max(1.0, sv[0])
        if sv[-1] > 1e-6 * scale:
            continue
        mult = int(np.count_nonzero(sv < 1e-6 * scale))
        if mult == 1:
            # simple root: bracket the sign change of det near k0 and polish
            for width in (1e-9, 1e-7, 1e-5, dk):
                x0, x1 = max(k0 - width, lo), min(k0 + width, hi)
                if det(x0) * det(x1) < 0:
                    k0 = so.brentq(det, x0, x1, xtol=root_tol * 1e-2, rtol=4 * np.finfo(float).eps)
                    break
        sv = np.linalg.svd(secular_matrix(g, k0), compute_uv=False)
        mult = max(1, int(np.count_nonzero(sv < max(mult_tol, 1e3 * sv[-1]) * scale)))
        if roots and abs(roots[-1][0] - k0) < 1e-9:
            continue
        if k0 > k_max + 1e-12:
            continue
        roots.append((float(k0), mult))
    return roots


def kirchhoff_spectrum(g, k_max, steps=None, threads=1):
    """Eigenvalues k^2 <= k_max^2 with multiplicity, including 0 for each component."""
    _require_compact(g)
    ncomp, _ = _components(g)
    out = [0.0] * int(ncomp)
    for k, mult in kirchhoff_roots(g, k_max, steps, threads):
        out.extend([k * k] * mult)
    return out


def weyl_count_bound(g):
    return len(g.vertices) + len(g.edges)


# ------------------------------------------------------------ eigenfunctions


@dataclass(frozen=True, eq=False)
class GraphEigenfunction:
    """Edge-wise coefficients of an orthonormal eigenbasis at wavenumber k.

    ``basis[j]`` has shape (|E|, 2): (A_e, B_e) with
    u_e(t) = A cos kt + B sin kt, or A + B t at k = 0.
    """
    graph: MetricGraph
    k: float
    basis: tuple
    continuity_residual: float
    kirchhoff_residual: float

    @property
    def multiplicity(self):
        return len(self.basis)

    def value(self, j, edge, t):
        A, B = self.basis[j][edge]
        if self.k == 0:
            return A + B * np.asarray(t)
        return A * np.cos(self.k * np.asarray(t)) + B * np.sin(self.k * np.asarray(t))

    def derivative(self, j, edge, t):
        A, B = self.basis[j][edge]
        if self.k == 0:
            return B + 0.0 * np.asarray(t)
        k = self.k
        return -A * k * np.sin(k * np.asarray(t)) + B * k * np.cos(k * np.asarray(t))


def _gram(g, k, vecs):
    """L^2(E) Gram matrix of coefficient vectors (columns, layout A0 B0 A1 B1 ...)."""
    L = np.array([e.length for e in g.edges])
    if k == 0:
        caa, cbb, cab = L, L ** 3 / 3, L ** 2 / 2
    else:
        s2 = np.sin(2 * k * L) / (4 * k)
        caa = L / 2 + s2
        cbb = L / 2 - s2
        cab = np.sin(k * L) ** 2 / (2 * k)
    A = vecs[0::2]
    B = vecs[1::2]
    G = (A.T * caa) @ A + (B.T * cbb) @ B + (A.T * cab) @ B + (B.T * cab) @ A
    return 0.5 * (G + G.T)


def _vertex_residuals(g, k, coeffs):
    cont = 0.0
    kirch = 0.0
    for ends in g.ends_at():
        vals, ders = [], []
        for e, side in ends:
            A, B = coeffs[e]
            length = g.edges[e].length
            if k == 0:
                vals.append(A + B * length * side)
                ders.append(B if side == 0 else -B)
            elif side == 0:
                vals.append(A)
                ders.append(k * B)
            else:
                vals.append(A * math.cos(k * length) + B * math.sin(k * length))
                ders.append(k * (A * math.sin(k * length) - B * math.cos(k * length)))
        if vals:
            cont = max(cont, max(vals) - min(vals))
            kirch = max(kirch, abs(sum(ders)))
    return cont, kirch


def graph_eigenfunction(g, k, tol=None):
    """Orthonormal eigenbasis for the Kirchhoff Laplacian at wavenumber k."""
    _require_compact(g)
    tol = tol or config.TOL.multiplicity_tol
    ne = len(g.edges)
    if k == 0:
        _, labels = _components(g)
        idx = g.vertex_index
        basis = []
        for c in np.unique(labels):
            v = np.zeros(2 * ne)
            for i, e in enumerate(g.edges):
                if labels[idx[e.head]] == c:
                    v[2 * i] = 1.0
            basis.append(v)
        V = np.array(basis).T
    else:
        M = secular_matrix(g, k)
        _, sv, Vt = np.linalg.svd(M)
        scale = max(1.0, sv[0])
        null = sv < tol * scale
        if not null.any():
            raise NotARootError(f"k={k} is not a secular root (smallest singular value {sv[-1]:.3e})")
        V = Vt[null].T
    G = _gram(g, k, V)
    w, Q = np.linalg.eigh(G)
    V = V @ Q / np.sqrt(w)
    basis = tuple(V[:, j].reshape(ne, 2) for j in range(V.shape[1]))
    cont = kirch = 0.0
    for b in basis:
        c, r = _vertex_residuals(g, k, b)
        cont, kirch = max(cont, c), max(kirch, r)
    return GraphEigenfunction(g, float(k), basis, cont, kirch)


# ------------------------------------------------------------------- metric


def _vertex_distances(g):
    idx = g.vertex_index
    n = len(g.vertices)
    best = {}
    for e in g.edges:
        if e.tail is None or e.head == e.tail:
            continue
        key = (idx[e.head], idx[e.tail])
        best[key] = min(best.get(key, math.inf), e.length)
    if best:
        r, c = zip(*best)
        A = sp.coo_matrix((list(best.values()), (r, c)), shape=(n, n)).tocsr()
    else:
        A = sp.csr_matrix((n, n))
    D = csgraph.dijkstra(A, directed=False)
    return np.minimum(D, D.T)


def _anchor(g, p):
    """Represent a point as [(vertex position, offset)] routes, plus (edge, t) if on an edge."""
    idx = g.vertex_index
    if isinstance(p, tuple) and len(p) == 2 and p[0] in g.edge_index:
        e = g.edges[g.edge_index[p[0]]]
        t = float(p[1])
        if not 0 <= t <= e.length:
            raise DomainError(f"offset {t} outside edge {e.id!r}")
        routes = [(idx[e.head], t)]
        if e.tail is not None:
            routes.append((idx[e.tail], e.length - t))
        return routes, (g.edge_index[p[0]], t)
    if p in idx:
        return [(idx[p], 0.0)], None
    raise DomainError(f"unknown point {p!r}")


def graph_path_metric(g, p, q, distances=None):
    """Length of the shortest path between two points (vertex ids or (edge id, offset))."""
    D = _vertex_distances(g) if distances is None else distances
    rp, ep = _anchor(g, p)
    rq, eq = _anchor(g, q)
    best = math.inf
    if ep is not None and eq is not None and ep[0] == eq[0]:
        best = abs(ep[1] - eq[1])
    for i, a in rp:
        for j, b in rq:
            best = min(best, (a + b) + D[i, j])
    return float(best)


# ---------------------------------------------------------- discretization


@dataclass(frozen=True, eq=False)
class GraphMesh:
    graph: MetricGraph
    h: float
    labels: tuple  # per node: ("v", vertex id) or ("e", edge id, t)


def discretize_graph_form(g, h, truncate=None):
    """Piecewise-linear Kirchhoff form s_0 on a mesh of each edge, glued at vertices.

    Infinite edges are cut at length ``truncate`` with a Dirichlet far end.
    """
    validate_graph(g)
    if not h > 0 or h > g.lower_length / 4:
        raise SizeError(f"mesh h={h} too coarse for minimum edge length {g.lower_length}")
    idx = g.vertex_index
    labels = [("v", v) for v in g.vertices]
    n_v = len(labels)
    rows, cols, vals = [], [], []
    mass = [0.0] * n_v
    for e in g.edges:
        length = e.length
        dirichlet_end = False
        if not math.isfinite(length) or e.tail is None:
            if truncate is None:
                raise DomainError(f"edge {e.id!r} is infinite; pass truncate=")
            length = float(truncate)
            dirichlet_end = True
        m = max(1, math.ceil(length / h - 1e-9))
        he = length / m
        start = len(labels)
        for i in range(1, m):
            labels.append(("e", e.id, i * he))
            mass.append(0.0)
        chain = [idx[e.head]] + list(range(start, start + m - 1))
        chain.append(None if dirichlet_end else idx[e.tail])
        for a, b in zip(chain[:-1], chain[1:]):
            for node in (a, b):
                if node is not None:
                    mass[node] += he / 2
            if a is not None and b is not None:
                rows += [a, b, a, b]
                cols += [a, b, b, a]
                vals += [1 / he, 1 / he, -1 / he, -1 / he]
            else:
                node = a if a is not None else b
                rows.append(node)
                cols.append(node)
                vals.append(1 / he)
    n = len(labels)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mass = np.array(mass)
    if np.any(mass <= 0):
        raise DomainError("isolated vertex without incident edges")
    return DiscreteForm(K, np.zeros(n), mass, carrier=GraphMesh(g, h, tuple(labels)))


# ----------------------------------------------------------------- examples


def interval_graph(length):
    return MetricGraph.from_triplets(("a", "b"), [("a", "b", length)])


def loop_graph(length):
    return MetricGraph.from_triplets(("o",), [("o", "o", length)])


def star_graph(lengths):
    lengths = list(lengths)
    verts = ("c",) + tuple(f"leaf{i}" for i in range(len(lengths)))
    return MetricGraph.from_triplets(verts, [("c", f"leaf{i}", l) for i, l in enumerate(lengths)])
