import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from factories import block_form, laplacian, random_connected_form
from formlab import measures as M
from formlab.errors import DegenerateInputError, DomainError, PositivityError, SizeError
from formlab.forms import (Grid1D, assemble_schrodinger_form, capacity_1d, energy_measure,
                           form_from_matrices, gst_residual, interval_energy, interval_mass,
                           intrinsic_distance, is_irreducible, nonnegative_expm,
                           volume_growth_check, weyl_residual)
from formlab.solvers import eig_smallest

seeds = st.integers(0, 2**32 - 1)


# ------------------------------------------------------------------ assembly


def test_dirichlet_stencil():
    g = Grid1D(0.0, math.pi, 5)
    f = assemble_schrodinger_form(g, M.zero())
    K = f.K.toarray()
    h = math.pi / 4
    assert K.shape == (3, 3)
    np.testing.assert_allclose(np.diag(K), 2 / h)
    np.testing.assert_allclose(np.diag(K, 1), -1 / h)
    np.testing.assert_allclose(f.m, h)


def test_neumann_constants_are_energy_null():
    g = Grid1D(-1.0, 2.0, 31, ("neumann", "neumann"))
    f = assemble_schrodinger_form(g, M.zero())
    assert abs(f.value(np.ones(f.n))) < 1e-12
    assert f.m[0] == pytest.approx(g.h / 2)


def test_atom_bound_state():
    # -u'' - 2 delta: bound state -1; FD error is O(h)
    f = assemble_schrodinger_form(Grid1D(-20.0, 20.0, 4001), M.delta(0.0, -2.0))
    lam = eig_smallest(f, 1)[0].value
    assert lam == pytest.approx(-1.0, abs=2e-2)


def test_atom_tie_goes_left():
    g = Grid1D(0.0, 1.0, 3)  # nodes 0, 0.5, 1; interior only the middle one
    g5 = Grid1D(0.0, 1.0, 5)
    f = assemble_schrodinger_form(g5, M.delta(0.375, 1.0))  # halfway between 0.25 and 0.5
    assert f.p[0] == pytest.approx(1.0) and f.p[1] == 0.0
    assert assemble_schrodinger_form(g, M.delta(0.5, 3.0)).p[0] == pytest.approx(3.0)


def test_assembly_errors():
    with pytest.raises(DomainError):
        assemble_schrodinger_form(Grid1D(0.0, 1.0, 11), M.delta(1.5))
    with pytest.raises(SizeError):
        Grid1D(0.0, 1.0, 2)
    with pytest.raises(DomainError):
        Grid1D(1.0, 0.0, 5)


def test_form_validation():
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    with pytest.raises(DomainError):
        form_from_matrices(K, [0, 0], [1, 1])
    with pytest.raises(PositivityError):
        form_from_matrices(np.eye(2), [0, 0], [1, 0])


@given(seeds)
def test_symmetry_and_clamping(seed):
    rng = np.random.default_rng(seed)
    f = random_connected_form(rng)
    u = rng.standard_normal(f.n) + 1j * rng.standard_normal(f.n)
    v = rng.standard_normal(f.n) + 1j * rng.standard_normal(f.n)
    a, b = f.value(u, v), np.conj(f.value(v, u))
    assert abs(a - b) <= 1e-14 * max(abs(a), 1.0) * 10
    for _ in range(25):
        w = rng.standard_normal(f.n) * 2
        assert f.kinetic(np.clip(w, 0, 1)) <= f.kinetic(w) + 1e-12


def test_clamping_on_1000_vectors():
    rng = np.random.default_rng(0)
    f = assemble_schrodinger_form(Grid1D(0.0, 1.0, 101), M.zero())
    for _ in range(1000):
        w = rng.uniform(-1, 2, f.n)
        assert f.kinetic(np.clip(w, 0, 1)) <= f.kinetic(w) + 1e-12


# ------------------------------------------------------------ energy measure


def test_energy_measure_constant_and_ramp():
    g = Grid1D(0.0, 2.0, 41, ("neumann", "neumann"))
    f = assemble_schrodinger_form(g, M.zero())
    assert np.allclose(energy_measure(f, np.full(f.n, 3.0)).values, 0)
    d = energy_measure(f, 1.5 * g.x)
    assert d.total() == pytest.approx(1.5**2 * 2.0, rel=1e-13)
    assert np.allclose(d.values[1:-1], d.values[1])


def _leibniz_defect_form(f, u, phi):
    return f.kinetic(u, phi * u) - 0.5 * f.kinetic(u * u, phi)


def test_energy_measure_identity_100_pairs():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        f = random_connected_form(rng)
        u = rng.standard_normal(f.n)
        phi = rng.standard_normal(f.n)
        lhs = energy_measure(f, u).integrate(phi)
        rhs = _leibniz_defect_form(f, u, phi)
        scale = abs(f.K) @ np.abs(u * u) @ np.abs(phi) + 1.0
        worst = max(worst, abs(lhs - rhs) / scale)
        assert energy_measure(f, u).total() == pytest.approx(f.kinetic(u), rel=1e-12)
        assert np.all(energy_measure(f, u).values >= 0)
    assert worst < 1e-11


def test_energy_measure_dirichlet_boundary_part():
    f = assemble_schrodinger_form(Grid1D(0.0, 1.0, 21), M.zero())
    u = np.random.default_rng(3).standard_normal(f.n)
    d = energy_measure(f, u)
    assert d.total() == pytest.approx(f.kinetic(u), rel=1e-12)
    assert d.boundary > 0


def test_leibniz_rule_rate():
    # |Gamma(uv, w) - u Gamma(v, w) - v Gamma(u, w)| is O(h) overall (the half cells
    # at the ends) and O(h^2) at interior nodes
    defects, inner = [], []
    for n in (101, 201, 401, 801):
        g = Grid1D(0.0, 1.0, n, ("neumann", "neumann"))
        f = assemble_schrodinger_form(g, M.zero())
        x = g.x
        u, v, w = np.sin(2 * x), np.exp(x), np.cos(3 * x)
        lhs = energy_measure(f, u * v, w).values
        rhs = u * energy_measure(f, v, w).values + v * energy_measure(f, u, w).values
        defects.append(np.max(np.abs(lhs - rhs)))
        inner.append(np.max(np.abs(lhs - rhs)[1:-1]))
    assert all(a / b > 1.8 for a, b in zip(defects, defects[1:]))
    assert all(a / b > 3.6 for a, b in zip(inner, inner[1:]))


@given(seeds)
def test_energy_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    f = random_connected_form(rng)
    u, v, a, b = (rng.standard_normal(f.n) for _ in range(4))
    # pointwise |Gamma(u, v)| <= Gamma(u)^1/2 Gamma(v)^1/2 edge by edge, summed with weights
    i, j, w, s = f.edges()
    du, dv = u[i] - u[j], v[i] - v[j]
    fg = 0.5 * (a[i] * b[i] + a[j] * b[j])
    lhs = abs(np.sum(fg * w * du * dv))
    ff = 0.5 * (a[i] ** 2 + a[j] ** 2)
    gg = 0.5 * (b[i] ** 2 + b[j] ** 2)
    rhs = math.sqrt(np.sum(ff * w * du**2) * np.sum(gg * w * dv**2))
    assert lhs <= rhs * (1 + 1e-12)
    Guv = energy_measure(f, u, v).charges
    Gu = energy_measure(f, u).charges
    Gv = energy_measure(f, v).charges
    assert abs(np.sum(a * b * Guv)) <= math.sqrt(np.sum(a * a * Gu) * np.sum(b * b * Gv)) * (1 + 1e-9) + 1e-12


def test_interval_energy_and_mass_exact_on_pl():
    g = Grid1D(0.0, 1.0, 11, ("neumann", "neumann"))
    u = 2.0 * g.x + 1.0
    assert interval_energy(g, u, 0.25, 0.75) == pytest.approx(4 * 0.5)
    # int_{0.25}^{0.75} (2x+1)^2 dx
    exact = ((2 * 0.75 + 1) ** 3 - (2 * 0.25 + 1) ** 3) / 6
    assert interval_mass(g, u, 0.25, 0.75) == pytest.approx(exact, rel=1e-13)


# --------------------------------------------------- ground-state transform


def test_gst_oscillator_ground_state():
    f = assemble_schrodinger_form(Grid1D(-8.0, 8.0, 1601), M.harmonic())
    p = eig_smallest(f, 1)[0]
    rng = np.random.default_rng(4)
    for _ in range(10):
        phi = rng.standard_normal(f.n)
        assert gst_residual(f, p.vector, p.value, phi, phi, relative=True) < 1e-10
    # phi = psi = ground state: limited by the eigensolver's own residual
    assert gst_residual(f, p.vector, p.value, p.vector, p.vector, relative=True) < 1e-12
    phi = rng.standard_normal(f.n)
    psi = rng.standard_normal(f.n)
    shifted = gst_residual(f, p.vector, p.value + 0.1, phi, psi)
    assert shifted == pytest.approx(0.1 * abs(f.inner(phi, psi)), rel=1e-8)


def test_gst_positivity_error():
    f = assemble_schrodinger_form(Grid1D(0.0, 1.0, 11), M.zero())
    g = np.ones(f.n)
    g[3] = 0
    with pytest.raises(PositivityError):
        gst_residual(f, g, 0.0, g, g)


@given(seeds)
def test_gst_positive_potential_lower_bound(seed):
    # a positive solution at lam with vanishing transform residual forces H >= lam
    rng = np.random.default_rng(seed)
    f = random_connected_form(rng)
    phi = rng.uniform(0.5, 2.0, f.n)
    lam = float(rng.uniform(-2, 2))
    # choose the potential so that (H - lam) phi = 0 exactly
    p = lam * f.m - (f.K @ phi) / phi
    g = f.with_potential(p)
    test = rng.standard_normal(f.n)
    assert gst_residual(g, phi, lam, test, test, relative=True) < 1e-10
    assert eig_smallest(g, 1)[0].value >= lam - 1e-9


# ------------------------------------------------------------------ capacity


def test_capacity_values():
    f = assemble_schrodinger_form(Grid1D(-30.0, 30.0, 6001), M.zero())
    assert capacity_1d(f, (-1.0, 1.0)) == pytest.approx(4.0, abs=1e-3)
    assert capacity_1d(f, (-2.0, 2.0)) == pytest.approx(6.0, abs=1e-3)
    assert capacity_1d(f, (1.0, 1.0)) == 0.0
    with pytest.raises(DomainError):
        capacity_1d(f, (-40.0, 0.0))


def test_capacity_monotone_in_set():
    f = assemble_schrodinger_form(Grid1D(-10.0, 10.0, 2001), M.zero())
    caps = [capacity_1d(f, (-a, a)) for a in (0.5, 1.0, 1.5, 3.0)]
    assert all(b > a for a, b in zip(caps, caps[1:]))


# ---------------------------------------------------------- intrinsic metric


def test_intrinsic_distance():
    assert intrinsic_distance(1.0, 0.0, 3.0) == pytest.approx(3.0)
    assert intrinsic_distance(4.0, 0.0, 3.0) == pytest.approx(1.5)
    assert intrinsic_distance(lambda t: 1 + t * t, 0.0, 2.0) == pytest.approx(math.asinh(2.0), rel=1e-10)
    assert intrinsic_distance(2.0, 1.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        intrinsic_distance(lambda t: t, -1.0, 1.0)


def test_intrinsic_distance_discrete_maximizer():
    # max |u(3) - u(0)| over piecewise-linear u with 4 u'^2 <= 1
    x = np.linspace(0, 3, 301)
    from scipy.optimize import linprog

    n = x.size
    h = np.diff(x)
    # slopes s_k in [-1/2, 1/2] maximize sum s_k h_k
    res = linprog(-h, bounds=[(-0.5, 0.5)] * (n - 1))
    assert -res.fun == pytest.approx(intrinsic_distance(4.0, 0.0, 3.0), rel=1e-12)


def test_volume_growth():
    radii = np.linspace(1, 60, 60)
    line = volume_growth_check(None, lambda x, R: 2 * R, 0.0, radii, [0.1, 0.5, 1.0])
    assert line.satisfied
    loop = volume_growth_check(None, lambda x, R: min(2 * R, 2 * math.pi), 0.0, radii, [0.1, 1.0])
    assert loop.satisfied
    expo = volume_growth_check(None, lambda x, R: 2.0**R, 0.0, radii, [0.1])
    assert not expo.satisfied
    pts = np.linspace(-100, 100, 2001)
    sample = volume_growth_check(lambda a, b: abs(a - b), (pts, np.full(pts.size, 0.1)), 0.0,
                                 radii, [0.2])
    assert sample.satisfied


# ------------------------------------------------------------ irreducibility


def test_irreducible_free_interval():
    f = assemble_schrodinger_form(Grid1D(0.0, 1.0, 41), M.zero())
    ok, cert = is_irreducible(f)
    assert ok and cert.resolvent_min > 0 and cert.semigroup_min > 0


def test_reducible_two_blocks():
    K = sp.block_diag([laplacian(3, [0, 1], [1, 2], [1.0, 1.0]), laplacian(2, [0], [1], [2.0])])
    ok, cert = is_irreducible(form_from_matrices(K, np.zeros(5), np.ones(5)))
    assert not ok and cert.block.tolist() == [0, 1, 2]


@given(seeds)
def test_block_detection(seed):
    form, first = block_form(np.random.default_rng(seed))
    ok, cert = is_irreducible(form)
    assert not ok and cert.block.tolist() == first


def test_nonnegative_expm_matches_scipy():
    from scipy.linalg import expm

    rng = np.random.default_rng(5)
    B = rng.uniform(0, 1, (6, 6))
    X, lg = nonnegative_expm(B, 2.0)
    np.testing.assert_allclose(np.exp(lg) * X, expm(2 * B), rtol=1e-11)


def test_semigroup_of_long_chain_stays_positive():
    # far corners of exp(-H) underflow in double precision; the log record keeps them
    f = assemble_schrodinger_form(Grid1D(0.0, 1.0, 301), M.zero())
    ok, cert = is_irreducible(f)
    assert ok and math.isfinite(cert.semigroup_log_min)


# ------------------------------------------------------------- Weyl residual


def test_weyl_residual_zero_at_eigenpairs():
    f = assemble_schrodinger_form(Grid1D(0.0, math.pi, 801), M.zero())
    for p in eig_smallest(f, 3):
        rep = weyl_residual(f, p.value, p.vector)
        assert rep.residual < 1e-10
        assert rep.shift >= 1.0
    with pytest.raises(DegenerateInputError):
        weyl_residual(f, 1.0, np.zeros(f.n))


def test_weyl_residual_methods_agree():
    rng = np.random.default_rng(6)
    f = random_connected_form(rng, 80)
    u = rng.standard_normal(f.n)
    for lam in (-1.0, 0.3, 3.0):
        a = weyl_residual(f, lam, u).residual
        b = weyl_residual(f, lam, u, method="dense").residual
        assert a == pytest.approx(b, rel=1e-10)


def test_weyl_residual_scale_invariant():
    rng = np.random.default_rng(8)
    f = random_connected_form(rng, 30)
    u = rng.standard_normal(f.n)
    assert weyl_residual(f, 0.5, u).residual == pytest.approx(weyl_residual(f, 0.5, 7 * u).residual)
